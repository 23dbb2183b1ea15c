#pragma once

#include "garad/gaussian_map.hpp"
#include "garad/lk_flow.hpp"

#include <vector>

namespace garad {

/// 2-dof chi-square 95% gate: -2 ln(0.05).
inline double chi2_threshold_95() { return -2.0 * std::log(0.05); }

/// Gaussian model of static-point optical flow.
struct FlowModel {
    Vec2 mean = Vec2::Zero();
    Mat2 covariance = Mat2::Identity();
    int sample_count = 0;

    static constexpr double kCovarianceFloor = 1e-4;  // pixels^2, added to the diagonal
};

/// Sample mean and (n - 1)-normalized covariance of static flows, with the
/// diagonal floor applied so the model is always invertible.
inline FlowModel fit_flow_model(const std::vector<Vec2>& static_flows,
                                double covariance_floor = FlowModel::kCovarianceFloor) {
    const int n = static_cast<int>(static_flows.size());
    if (n < 3) throw Error("fit_flow_model: need at least 3 static flows, got " + std::to_string(n));
    FlowModel m;
    m.sample_count = n;
    for (const auto& v : static_flows) m.mean += v;
    m.mean /= n;
    Mat2 cov = Mat2::Zero();
    for (const auto& v : static_flows) {
        const Vec2 d = v - m.mean;
        cov += d * d.transpose();
    }
    cov /= (n - 1);
    m.covariance = cov + covariance_floor * Mat2::Identity();
    return m;
}

/// Mahalanobis-squared distance of a flow vector from the model.
inline double chi_square(const Vec2& flow, const FlowModel& model) {
    const Vec2 d = flow - model.mean;
    return d.dot(model.covariance.inverse() * d);
}

struct RecoveryOptions {
    double chi2_threshold = 5.991;
    LkOptions lk;
};

struct RecoveryResult {
    std::vector<std::int64_t> recovered;
    std::vector<std::int64_t> no_flow;  // candidates whose LK track failed, left unchanged
};

/// Chi-square gating of dynamic candidates: each candidate's LK flow at its
/// previous-frame pixel is tested against the static-flow model; flows inside
/// the gate relabel the Gaussian static (with a static history entry).
inline RecoveryResult verify_and_recover(GaussianMap& map, const std::vector<std::int64_t>& candidates,
                                         const std::vector<Vec2>& candidate_pixels_prev,
                                         const Image& img_prev, const Image& img_cur,
                                         const FlowModel& model, const RecoveryOptions& opts = {}) {
    if (candidates.size() != candidate_pixels_prev.size())
        throw Error("verify_and_recover: candidate/pixel count mismatch");
    RecoveryResult result;
    if (candidates.empty()) return result;
    const auto flows = lk_flow(img_prev, img_cur, candidate_pixels_prev, opts.lk);
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (!flows[i].valid) {
            result.no_flow.push_back(candidates[i]);
            continue;
        }
        if (chi_square(flows[i].flow, model) <= opts.chi2_threshold) {
            map.push_label(candidates[i], GaussianLabel::kStatic);
            result.recovered.push_back(candidates[i]);
        }
    }
    return result;
}

}  // namespace garad

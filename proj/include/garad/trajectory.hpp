#pragma once

#include "garad/core.hpp"

#include <Eigen/SVD>

#include <vector>

namespace garad {

/// Ordered pose sequence. Poses here are camera-to-world (TUM convention):
/// translation is the camera center.
struct Trajectory {
    std::vector<CameraPose> poses;

    void push(const CameraPose& p) {
        if (!poses.empty() && p.timestamp <= poses.back().timestamp)
            throw Error("Trajectory: timestamps must be strictly increasing");
        poses.push_back(p);
    }
    size_t size() const { return poses.size(); }
    bool empty() const { return poses.empty(); }
};

struct AteResult {
    double rmse = 0.0;
    double stddev = 0.0;
    int matched = 0;
};

namespace detail {

/// Rigid SE(3) alignment (no scale) mapping src points onto dst, Umeyama form.
inline std::pair<Mat3, Vec3> umeyama_se3(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    const size_t n = src.size();
    Vec3 mean_src = Vec3::Zero(), mean_dst = Vec3::Zero();
    for (size_t i = 0; i < n; ++i) {
        mean_src += src[i];
        mean_dst += dst[i];
    }
    mean_src /= static_cast<double>(n);
    mean_dst /= static_cast<double>(n);
    Mat3 h = Mat3::Zero();
    for (size_t i = 0; i < n; ++i) h += (src[i] - mean_src) * (dst[i] - mean_dst).transpose();
    const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
    const Vec3 t = mean_dst - r * mean_src;
    return {r, t};
}

}  // namespace detail

/// Absolute trajectory error: associates poses by nearest timestamp (within
/// `max_dt`), rigidly aligns the estimate onto the ground truth, and reports
/// RMSE and standard deviation of the translational residual norms.
inline AteResult evaluate_ate(const Trajectory& estimated, const Trajectory& ground_truth,
                              double max_dt = 0.02) {
    std::vector<Vec3> est, gt;
    size_t j = 0;
    for (const auto& e : estimated.poses) {
        while (j + 1 < ground_truth.poses.size() &&
               std::abs(ground_truth.poses[j + 1].timestamp - e.timestamp) <=
                   std::abs(ground_truth.poses[j].timestamp - e.timestamp))
            ++j;
        if (j < ground_truth.poses.size() &&
            std::abs(ground_truth.poses[j].timestamp - e.timestamp) <= max_dt) {
            est.push_back(e.translation);
            gt.push_back(ground_truth.poses[j].translation);
        }
    }
    if (est.size() < 3)
        throw DataError("evaluate_ate: fewer than 3 associable pose pairs (" +
                        std::to_string(est.size()) + ")");

    const auto [r, t] = detail::umeyama_se3(est, gt);
    AteResult res;
    res.matched = static_cast<int>(est.size());
    std::vector<double> norms(est.size());
    double sq_sum = 0.0, sum = 0.0;
    for (size_t i = 0; i < est.size(); ++i) {
        norms[i] = (gt[i] - (r * est[i] + t)).norm();
        sq_sum += norms[i] * norms[i];
        sum += norms[i];
    }
    const double n = static_cast<double>(est.size());
    res.rmse = std::sqrt(sq_sum / n);
    const double mean = sum / n;
    res.stddev = std::sqrt(std::max(0.0, sq_sum / n - mean * mean));
    return res;
}

}  // namespace garad

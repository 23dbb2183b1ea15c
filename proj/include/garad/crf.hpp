#pragma once

#include "garad/gaussian_map.hpp"
#include "garad/static_model.hpp"

#include <cmath>
#include <numeric>
#include <vector>

namespace garad {

/// Node features entering the pairwise kernels: mean reprojection error,
/// observation count, 3D position, and last observed pixel.
struct CrfFeatures {
    double reproj = 0.0;
    double obs_count = 0.0;
    Vec3 position = Vec3::Zero();
    Vec2 pixel = Vec2::Zero();
};

struct CrfNode {
    std::int64_t gaussian_id = -1;
    double psi_static = 0.0;   // unary cost of label 0
    double psi_dynamic = 0.0;  // unary cost of label 1
    CrfFeatures features;
};

struct KernelBandwidths {
    double reproj = 1.0;
    double obs_count = 1.0;
    double position = 1.0;
    double pixel = 1.0;
};

/// Fully connected binary CRF over Tagged Gaussians.
struct CrfProblem {
    std::vector<CrfNode> nodes;
    KernelBandwidths bandwidths;
    double omega_appearance = 1.0;
    double omega_position = 1.0;
};

/// Per-node marginal probability of the dynamic label.
struct MarginalField {
    std::vector<double> q;
};

inline int potts(int xi, int xj) { return xi != xj ? 1 : 0; }

/// Appearance kernel over reprojection error and observation count
/// (squared distances).
inline double kernel_appearance(const CrfFeatures& fi, const CrfFeatures& fj, double sigma_reproj,
                                double sigma_count) {
    const double da = fi.reproj - fj.reproj;
    const double dg = fi.obs_count - fj.obs_count;
    return std::exp(-da * da / (2.0 * sigma_reproj * sigma_reproj) -
                    dg * dg / (2.0 * sigma_count * sigma_count));
}

/// Position kernel over 3D position and pixel coordinates. The distances are
/// unsquared, matching the printed form this implements.
inline double kernel_position(const CrfFeatures& fi, const CrfFeatures& fj, double sigma_position,
                              double sigma_pixel) {
    const double dp = (fi.position - fj.position).norm();
    const double dq = (fi.pixel - fj.pixel).norm();
    return std::exp(-dp / (2.0 * sigma_position * sigma_position) -
                    dq / (2.0 * sigma_pixel * sigma_pixel));
}

/// Potts-gated weighted kernel sum between nodes i and j.
inline double pairwise_kernel(const CrfProblem& p, size_t i, size_t j) {
    const auto& fi = p.nodes[i].features;
    const auto& fj = p.nodes[j].features;
    return p.omega_appearance * kernel_appearance(fi, fj, p.bandwidths.reproj, p.bandwidths.obs_count) +
           p.omega_position * kernel_position(fi, fj, p.bandwidths.position, p.bandwidths.pixel);
}

inline double pairwise_potential(size_t i, size_t j, const std::vector<int>& labels, const CrfProblem& p) {
    return potts(labels[i], labels[j]) * pairwise_kernel(p, i, j);
}

/// Gibbs energy of a full labeling: sum of unaries plus all pairwise terms.
inline double gibbs_energy(const std::vector<int>& labels, const CrfProblem& p) {
    const size_t n = p.nodes.size();
    double e = 0.0;
    for (size_t i = 0; i < n; ++i) e += labels[i] == 0 ? p.nodes[i].psi_static : p.nodes[i].psi_dynamic;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) e += pairwise_potential(i, j, labels, p);
    return e;
}

struct MeanFieldResult {
    MarginalField marginals;
    std::vector<int> labels;            // argmax, ties resolved to static
    std::vector<double> free_energy;    // after each sweep
    bool converged = false;
    int iterations_run = 0;
};

namespace detail {
inline double xlogx(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

inline double mean_field_free_energy(const CrfProblem& p, const std::vector<double>& q,
                                     const std::vector<std::vector<double>>& kernel) {
    const size_t n = p.nodes.size();
    double f = 0.0;
    for (size_t i = 0; i < n; ++i) {
        f += (1.0 - q[i]) * p.nodes[i].psi_static + q[i] * p.nodes[i].psi_dynamic;
        f += xlogx(q[i]) + xlogx(1.0 - q[i]);
    }
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j)
            f += kernel[i][j] * ((1.0 - q[i]) * q[j] + q[i] * (1.0 - q[j]));
    return f;
}
}  // namespace detail

/// Dense mean-field inference with exact pairwise sums. Nodes are updated
/// sequentially in index order (coordinate descent on the variational free
/// energy), so the recorded free energy is non-increasing per sweep.
inline MeanFieldResult mean_field_infer(const CrfProblem& p, int iterations,
                                        double convergence_tol = 1e-6) {
    if (iterations < 1) throw Error("mean_field_infer: iterations must be >= 1");
    const size_t n = p.nodes.size();
    MeanFieldResult result;
    result.marginals.q.resize(n);
    std::vector<double>& q = result.marginals.q;

    // q_i initialized from the unary softmax
    for (size_t i = 0; i < n; ++i) {
        const double a = p.nodes[i].psi_static - p.nodes[i].psi_dynamic;
        q[i] = 1.0 / (1.0 + std::exp(-a));
    }

    std::vector<std::vector<double>> kernel(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) kernel[i][j] = kernel[j][i] = pairwise_kernel(p, i, j);

    for (int it = 0; it < iterations; ++it) {
        double max_delta = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double msg_static = 0.0, msg_dynamic = 0.0;
            for (size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                msg_static += kernel[i][j] * q[j];          // neighbors voting dynamic oppose static
                msg_dynamic += kernel[i][j] * (1.0 - q[j]);
            }
            const double a_static = -p.nodes[i].psi_static - msg_static;
            const double a_dynamic = -p.nodes[i].psi_dynamic - msg_dynamic;
            const double q_new = 1.0 / (1.0 + std::exp(a_static - a_dynamic));
            max_delta = std::max(max_delta, std::abs(q_new - q[i]));
            q[i] = q_new;
        }
        result.free_energy.push_back(detail::mean_field_free_energy(p, q, kernel));
        result.iterations_run = it + 1;
        if (max_delta < convergence_tol) {
            result.converged = true;
            break;
        }
    }

    result.labels.resize(n);
    for (size_t i = 0; i < n; ++i) result.labels[i] = q[i] > 0.5 ? 1 : 0;
    return result;
}

/// Fraction of dynamic labels over the most recent min(n + 1, |history|)
/// entries. The window spans n + 1 keyframes (current plus n back).
inline double window_score(const std::deque<std::uint8_t>& history, int n) {
    if (history.empty()) throw Error("window_score: empty history");
    const size_t span = std::min<size_t>(static_cast<size_t>(n) + 1, history.size());
    size_t dynamic = 0;
    for (size_t i = history.size() - span; i < history.size(); ++i)
        if (history[i] != 0) ++dynamic;
    return static_cast<double>(dynamic) / static_cast<double>(span);
}

/// Deletes Gaussians whose label stayed dynamic for a full window: score at
/// or above the threshold over n + 1 recorded keyframes. Shorter histories
/// are always retained.
inline std::vector<std::int64_t> apply_retention(GaussianMap& map, int n, double delete_threshold) {
    std::vector<std::int64_t> doomed;
    map.for_each([&](const TaggedGaussian& g) {
        if (!g.dynamic() || g.label_history.empty()) return;
        if (static_cast<int>(g.label_history.size()) < n + 1) return;
        if (window_score(g.label_history, n) >= delete_threshold) doomed.push_back(g.id);
    });
    for (auto id : doomed) map.erase(id);
    return doomed;
}

/// Data-driven default bandwidths: standard deviation of each feature over
/// the node set (RMS deviation from the mean for vector features), floored.
inline KernelBandwidths default_bandwidths(const std::vector<CrfNode>& nodes) {
    KernelBandwidths bw;
    if (nodes.size() < 2) return bw;
    const double n = static_cast<double>(nodes.size());
    double mr = 0.0, mc = 0.0;
    Vec3 mp = Vec3::Zero();
    Vec2 mq = Vec2::Zero();
    for (const auto& node : nodes) {
        mr += node.features.reproj;
        mc += node.features.obs_count;
        mp += node.features.position;
        mq += node.features.pixel;
    }
    mr /= n; mc /= n; mp /= n; mq /= n;
    double vr = 0.0, vc = 0.0, vp = 0.0, vq = 0.0;
    for (const auto& node : nodes) {
        vr += (node.features.reproj - mr) * (node.features.reproj - mr);
        vc += (node.features.obs_count - mc) * (node.features.obs_count - mc);
        vp += (node.features.position - mp).squaredNorm();
        vq += (node.features.pixel - mq).squaredNorm();
    }
    auto dev = [&](double v) {
        const double s = std::sqrt(v / n);
        return s > 1e-12 ? s : 1.0;
    };
    bw.reproj = dev(vr);
    bw.obs_count = dev(vc);
    bw.position = dev(vp);
    bw.pixel = dev(vq);
    return bw;
}

/// Assembles the CRF over a map snapshot with unaries from the static model.
inline CrfProblem build_crf_problem(const std::vector<TaggedGaussian>& gaussians,
                                    const StaticStatModel& model, double omega_appearance = 1.0,
                                    double omega_position = 1.0,
                                    std::optional<KernelBandwidths> bandwidths = std::nullopt) {
    CrfProblem p;
    p.omega_appearance = omega_appearance;
    p.omega_position = omega_position;
    p.nodes.reserve(gaussians.size());
    for (const auto& g : gaussians) {
        CrfNode node;
        node.gaussian_id = g.id;
        const UnaryPotential u = unary_potential(g.stats, model);
        node.psi_static = u.psi_static;
        node.psi_dynamic = u.psi_dynamic;
        node.features.reproj = g.stats.mean_reproj_error;
        node.features.obs_count = g.stats.observation_count;
        node.features.position = g.position;
        node.features.pixel = g.last_pixel;
        p.nodes.push_back(node);
    }
    p.bandwidths = bandwidths ? *bandwidths : default_bandwidths(p.nodes);
    return p;
}

}  // namespace garad

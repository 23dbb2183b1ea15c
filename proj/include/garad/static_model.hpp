#pragma once

#include "garad/gaussian_map.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace garad {

/// Four 1-D Gaussian components fitted over the static population, one per
/// motion statistic: reprojection error, depth variation, observation count,
/// epipolar distance. Mixture weights sum to 1.
struct StaticStatModel {
    struct Component {
        double mean = 0.0;
        double variance = 1.0;
    };
    std::array<Component, 4> components{};
    Vec4 weights = Vec4::Constant(0.25);
    bool fitted = false;

    static constexpr double kVarianceFloor = 1e-6;
};

struct FitOptions {
    int min_samples = 8;
    double variance_floor = StaticStatModel::kVarianceFloor;
    Vec4 weights = Vec4::Constant(0.25);
};

/// Moment-matching fit of the per-statistic means and sample variances over a
/// bootstrap population. Degenerate spreads hit the variance floor.
inline StaticStatModel fit_static_model(const std::vector<MotionStats>& stats,
                                        const FitOptions& opts = {}) {
    const int n = static_cast<int>(stats.size());
    if (n < opts.min_samples)
        throw Error("fit_static_model: insufficient bootstrap samples (" + std::to_string(n) + " < " +
                    std::to_string(opts.min_samples) + ")");
    StaticStatModel model;
    model.weights = opts.weights / opts.weights.sum();
    for (int k = 0; k < 4; ++k) {
        double mean = 0.0;
        for (const auto& s : stats) mean += s.as_vector()[k];
        mean /= n;
        double m2 = 0.0;
        for (const auto& s : stats) {
            const double d = s.as_vector()[k] - mean;
            m2 += d * d;
        }
        const double var = n > 1 ? m2 / (n - 1) : 0.0;
        model.components[k].mean = mean;
        model.components[k].variance = std::max(var, opts.variance_floor);
    }
    model.fitted = true;
    return model;
}

/// Peak-normalized Gaussian density exp(-(x-mu)^2 / (2 sigma^2)), in (0, 1].
inline double component_density(double x, int k, const StaticStatModel& model) {
    const auto& c = model.components[static_cast<size_t>(k)];
    const double d = x - c.mean;
    return std::exp(-d * d / (2.0 * c.variance));
}

/// Mixture static probability: each component evaluated at the Gaussian's own
/// statistic of that kind, combined with the mixture weights.
inline double static_probability(const MotionStats& stats, const StaticStatModel& model) {
    const Vec4 x = stats.as_vector();
    double p = 0.0;
    for (int k = 0; k < 4; ++k) p += model.weights[k] * component_density(x[k], k, model);
    return p;
}

struct UnaryPotential {
    double psi_static = 0.0;
    double psi_dynamic = 0.0;
};

constexpr double kUnaryEpsilon = 1e-6;

/// Label costs: psi(static) = -log(P_static); the dynamic side is the
/// complement with an epsilon guard so both stay finite.
inline UnaryPotential unary_potential(const MotionStats& stats, const StaticStatModel& model) {
    const double p = static_probability(stats, model);
    UnaryPotential u;
    u.psi_static = -std::log(std::max(p, 1e-300));
    u.psi_dynamic = -std::log(std::max(1.0 - p + kUnaryEpsilon, 1e-300));
    return u;
}

}  // namespace garad

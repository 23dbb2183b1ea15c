#pragma once

#include "garad/core.hpp"

#include <Eigen/Cholesky>

#include <vector>

namespace garad {

/// One 3D-2D match entering pose estimation.
struct Correspondence {
    Vec3 world_point = Vec3::Zero();
    Vec2 pixel = Vec2::Zero();
    Mat2 pixel_cov = Mat2::Identity();
};

struct HuberValue {
    double cost = 0.0;
    double weight = 1.0;  // IRLS weight
};

/// Huber kernel on a residual norm: quadratic inside delta, linear outside.
inline HuberValue huber(double residual_norm, double delta) {
    if (delta <= 0.0) throw Error("huber: delta must be positive");
    HuberValue h;
    const double r = std::abs(residual_norm);
    if (r <= delta) {
        h.cost = 0.5 * r * r;
        h.weight = 1.0;
    } else {
        h.cost = delta * (r - 0.5 * delta);
        h.weight = delta / r;
    }
    return h;
}

struct PoseSolveOptions {
    double huber_delta = 1.345;       // pixels, after whitening
    bool robust = true;
    double initial_lambda = 1e-4;
    double lambda_factor = 10.0;
    double max_lambda = 1e8;
    int max_iterations = 20;
    double update_tolerance = 1e-8;
    double cost_tolerance = 1e-10;    // relative cost change
    double inlier_chi2 = 5.991;       // 2-dof 95% gate on the whitened residual
};

struct PoseSolveResult {
    CameraPose pose;
    std::vector<double> chi2;         // per-point squared Mahalanobis residual
    std::vector<bool> inlier;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

struct ResidualEval {
    Vec2 residual = Vec2::Zero();              // whitened
    Eigen::Matrix<double, 2, 6> jacobian;      // d residual / d [omega, v], whitened
    bool behind = false;
};

/// Whitened reprojection residual and its analytic Jacobian on the SE(3)
/// tangent. Perturbation model: R <- exp(w^) R, t <- t + v.
inline ResidualEval evaluate_residual(const CameraPose& pose, const Camera& cam,
                                      const Correspondence& c, bool with_jacobian) {
    ResidualEval ev;
    const Vec3 pc = pose.transform(c.world_point);
    if (pc.z() <= kMinDepth) {
        ev.behind = true;
        return ev;
    }
    const Vec2 proj = project_camera_point(cam, pc);
    // whitening by the inverse square root of the pixel covariance
    const Eigen::LLT<Mat2> llt(c.pixel_cov);
    const Mat2 l_inv = Mat2(llt.matrixL()).inverse();
    ev.residual = l_inv * (c.pixel - proj);
    if (with_jacobian) {
        const double z_inv = 1.0 / pc.z();
        Eigen::Matrix<double, 2, 3> dproj;
        dproj << cam.fx * z_inv, 0.0, -cam.fx * pc.x() * z_inv * z_inv,
                 0.0, cam.fy * z_inv, -cam.fy * pc.y() * z_inv * z_inv;
        Eigen::Matrix<double, 3, 6> dpc;
        dpc.leftCols<3>() = -skew(pc - pose.translation);  // d pc / d omega = -[R p]_x
        dpc.rightCols<3>() = Mat3::Identity();
        ev.jacobian = -l_inv * dproj * dpc;
    }
    return ev;
}

inline double total_cost(const CameraPose& pose, const Camera& cam,
                         const std::vector<Correspondence>& cs, const PoseSolveOptions& opts) {
    double cost = 0.0;
    for (const auto& c : cs) {
        const auto ev = evaluate_residual(pose, cam, c, false);
        if (ev.behind) {
            cost += huber(1e3, opts.huber_delta).cost;  // behind-camera points cost like gross outliers
            continue;
        }
        const double r = ev.residual.norm();
        cost += opts.robust ? huber(r, opts.huber_delta).cost : 0.5 * r * r;
    }
    return cost;
}

}  // namespace detail

/// Levenberg-Marquardt pose estimation over the SE(3) tangent with a robust
/// kernel on whitened reprojection errors. Diverging runs return the initial
/// pose unconverged; the caller decides what to hold on to.
inline PoseSolveResult solve_pose(const std::vector<Correspondence>& correspondences,
                                  const CameraPose& initial_pose, const Camera& cam,
                                  const PoseSolveOptions& opts = {}) {
    if (correspondences.size() < 6)
        throw Error("solve_pose: need at least 6 correspondences, got " +
                    std::to_string(correspondences.size()));
    PoseSolveResult result;
    CameraPose pose = initial_pose;
    pose.rotation.normalize();

    double lambda = opts.initial_lambda;
    double cost = detail::total_cost(pose, cam, correspondences, opts);
    result.initial_cost = cost;

    for (int it = 0; it < opts.max_iterations; ++it) {
        ++result.iterations;
        Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        for (const auto& c : correspondences) {
            const auto ev = detail::evaluate_residual(pose, cam, c, true);
            if (ev.behind) continue;
            const double w = opts.robust ? huber(ev.residual.norm(), opts.huber_delta).weight : 1.0;
            h += w * ev.jacobian.transpose() * ev.jacobian;
            g -= w * ev.jacobian.transpose() * ev.residual;
        }

        bool stepped = false;
        while (lambda <= opts.max_lambda) {
            Eigen::Matrix<double, 6, 6> damped = h;
            for (int k = 0; k < 6; ++k) damped(k, k) += lambda * std::max(h(k, k), 1e-12);
            const Eigen::Matrix<double, 6, 1> delta = damped.ldlt().solve(g);
            if (!delta.allFinite()) {
                lambda *= opts.lambda_factor;
                continue;
            }
            if (delta.norm() < opts.update_tolerance) {
                result.converged = true;
                stepped = true;
                break;
            }
            CameraPose trial = pose;
            trial.rotation = (quat_exp(delta.head<3>()) * pose.rotation).normalized();
            trial.translation = pose.translation + delta.tail<3>();
            const double trial_cost = detail::total_cost(trial, cam, correspondences, opts);
            if (trial_cost <= cost) {
                const double rel_change = std::abs(cost - trial_cost) / std::max(cost, 1e-300);
                pose = trial;
                cost = trial_cost;
                lambda = std::max(lambda / opts.lambda_factor, 1e-12);
                stepped = true;
                if (rel_change < opts.cost_tolerance || delta.norm() < opts.update_tolerance)
                    result.converged = true;
                break;
            }
            lambda *= opts.lambda_factor;
        }
        if (!stepped) break;  // diverged: no acceptable step at any damping
        if (result.converged) break;
    }

    if (!result.converged && cost > result.initial_cost) {
        pose = initial_pose;  // defensive; steps are only ever accepted on non-increase
        cost = result.initial_cost;
    }

    result.pose = pose;
    result.pose.timestamp = initial_pose.timestamp;
    result.final_cost = cost;
    result.chi2.resize(correspondences.size());
    result.inlier.resize(correspondences.size());
    for (size_t i = 0; i < correspondences.size(); ++i) {
        const auto ev = detail::evaluate_residual(pose, cam, correspondences[i], false);
        result.chi2[i] = ev.behind ? std::numeric_limits<double>::infinity() : ev.residual.squaredNorm();
        result.inlier[i] = result.chi2[i] <= opts.inlier_chi2;
    }
    return result;
}

}  // namespace garad

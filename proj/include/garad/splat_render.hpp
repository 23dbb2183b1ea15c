#pragma once

#include "garad/gaussian_map.hpp"
#include "garad/image.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace garad {

struct RenderOptions {
    double dilation = 0.3;                // px^2 added to the screen covariance diagonal
    double alpha_min = 1e-6;              // contributions below this are skipped
    double transmittance_min = 1e-4;      // early termination
    double max_radius = 512.0;            // px, bbox safety clamp
};

/// Composited raster: color, weighted-mean depth, and the per-pixel
/// transmittance remainder after all splats.
struct RenderedImage {
    Image rgb;
    Image depth;
    Image final_transmittance;
};

// degree-1 real SH constant
constexpr double kSh1 = 0.4886025119029199;

inline Vec3 sh_basis1(const Vec3& dir) { return {-kSh1 * dir.y(), kSh1 * dir.z(), -kSh1 * dir.x()}; }

/// View-dependent color: degree-0 RGB plus optional degree-1 term.
inline Vec3 evaluate_color(const TaggedGaussian& g, const Vec3& camera_center) {
    if (g.sh1.isZero(0.0)) return g.color;
    const Vec3 d = (g.position - camera_center).normalized();
    return g.color + g.sh1 * sh_basis1(d);
}

struct ProjectedGaussian {
    bool culled = true;
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();    // screen covariance including dilation
    Mat2 conic = Mat2::Identity();  // its inverse
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bbox
};

/// EWA projection of one Gaussian: world covariance R S^2 R^T pushed through
/// the camera rotation and the perspective Jacobian at the center.
inline ProjectedGaussian project_gaussian(const TaggedGaussian& g, const CameraPose& pose,
                                          const Camera& cam, const RenderOptions& opts = {}) {
    ProjectedGaussian p;
    const Vec3 pc = pose.transform(g.position);
    if (pc.z() <= kMinDepth) return p;
    p.culled = false;
    p.depth = pc.z();
    p.mean = project_camera_point(cam, pc);
    p.opacity = g.opacity;
    p.color = evaluate_color(g, pose.center());

    const Mat3 rot = g.rotation.normalized().toRotationMatrix();
    const Mat3 cov3 = rot * g.scale.cwiseProduct(g.scale).asDiagonal() * rot.transpose();
    const Mat3 rcw = pose.rotation.toRotationMatrix();
    const Mat3 cov_cam = rcw * cov3 * rcw.transpose();

    const double zi = 1.0 / pc.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx * zi, 0.0, -cam.fx * pc.x() * zi * zi,
           0.0, cam.fy * zi, -cam.fy * pc.y() * zi * zi;
    p.cov = jac * cov_cam * jac.transpose() + opts.dilation * Mat2::Identity();
    p.conic = p.cov.inverse();

    // bbox radius where alpha falls below alpha_min, so the bbox never cuts a
    // contribution the alpha test would keep
    const double peak = std::max(g.opacity, opts.alpha_min);
    const double d2max = 2.0 * std::log(peak / opts.alpha_min);
    const double sigma_max = std::sqrt(std::max(p.cov(0, 0), p.cov(1, 1)));
    const double radius = std::min(opts.max_radius, std::ceil(sigma_max * std::sqrt(std::max(d2max, 0.0)) + 1.0));
    p.x0 = std::max(0, static_cast<int>(std::floor(p.mean.x() - radius)));
    p.x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(p.mean.x() + radius)));
    p.y0 = std::max(0, static_cast<int>(std::floor(p.mean.y() - radius)));
    p.y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(p.mean.y() + radius)));
    return p;
}

/// One composited splat at one pixel, recorded for the backward pass.
struct Contribution {
    int gaussian = -1;      // index into the input vector
    double alpha = 0.0;     // opacity * gaussian falloff
    double falloff = 0.0;   // exp(-d^2 / 2)
    double transmittance = 0.0;  // T before this contribution
};

struct CompositeCache {
    std::vector<ProjectedGaussian> projected;
    std::vector<std::vector<Contribution>> pixels;
};

/// Front-to-back alpha compositing of the given Gaussians (callers filter by
/// label). Depth sort is internal with ties broken by input index, so the
/// result is invariant to input order.
inline RenderedImage composite(const std::vector<TaggedGaussian>& gaussians, const CameraPose& pose,
                               const Camera& cam, const RenderOptions& opts = {},
                               CompositeCache* cache = nullptr) {
    const int w = cam.width, h = cam.height;
    RenderedImage out{Image::rgb(w, h), Image::gray(w, h), Image::gray(w, h, 1.0)};

    std::vector<ProjectedGaussian> projected(gaussians.size());
    for (size_t i = 0; i < gaussians.size(); ++i) projected[i] = project_gaussian(gaussians[i], pose, cam, opts);

    std::vector<int> order;
    order.reserve(gaussians.size());
    for (size_t i = 0; i < gaussians.size(); ++i)
        if (!projected[i].culled) order.push_back(static_cast<int>(i));
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (projected[a].depth != projected[b].depth) return projected[a].depth < projected[b].depth;
        return gaussians[static_cast<size_t>(a)].id < gaussians[static_cast<size_t>(b)].id;
    });

    std::vector<double> trans(static_cast<size_t>(w) * h, 1.0);
    std::vector<double> depth_weight(static_cast<size_t>(w) * h, 0.0);
    if (cache) {
        cache->pixels.assign(static_cast<size_t>(w) * h, {});
    }

    for (int gi : order) {
        const ProjectedGaussian& pg = projected[static_cast<size_t>(gi)];
        for (int y = pg.y0; y <= pg.y1; ++y)
            for (int x = pg.x0; x <= pg.x1; ++x) {
                const size_t pix = static_cast<size_t>(y) * w + x;
                double& t = trans[pix];
                if (t < opts.transmittance_min) continue;
                const Vec2 d(x - pg.mean.x(), y - pg.mean.y());
                const double d2 = d.dot(pg.conic * d);
                if (d2 < 0.0) continue;
                const double falloff = std::exp(-0.5 * d2);
                const double alpha = std::min(pg.opacity * falloff, 1.0);
                if (alpha < opts.alpha_min) continue;
                const double weight = alpha * t;
                for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) += pg.color[c] * weight;
                out.depth.at(x, y) += pg.depth * weight;
                depth_weight[pix] += weight;
                if (cache) cache->pixels[pix].push_back({gi, alpha, falloff, t});
                t *= 1.0 - alpha;
            }
    }

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t pix = static_cast<size_t>(y) * w + x;
            out.final_transmittance.at(x, y) = trans[pix];
            out.depth.at(x, y) = depth_weight[pix] > 1e-12 ? out.depth.at(x, y) / depth_weight[pix] : 0.0;
        }
    if (cache) cache->projected = std::move(projected);
    return out;
}

/// Parameter gradients for one Gaussian.
struct GaussianGrads {
    Vec3 position = Vec3::Zero();
    Vec3 scale = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();  // (w, x, y, z), through quaternion normalization
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    Mat3 sh1 = Mat3::Zero();
};

namespace detail {

/// dR/dq for a unit quaternion q = (w, x, y, z); index 0..3 picks the component.
inline Mat3 rotation_matrix_derivative(const Quat& q, int k) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    Mat3 m;
    switch (k) {
        case 0: m << 0, -z, y, z, 0, -x, -y, x, 0; break;
        case 1: m << 0, y, z, y, -2 * x, -w, z, w, -2 * x; break;
        case 2: m << -2 * y, x, w, x, 0, z, -w, z, -2 * y; break;
        default: m << -2 * z, -w, x, w, -2 * z, y, x, y, 0; break;
    }
    return 2.0 * m;
}

}  // namespace detail

/// Reverse-mode gradients of a scalar image loss through compositing and the
/// EWA projection, given dL/dC per pixel. Gradients accumulate into `grads`
/// (indexed like the input vector used for composite).
inline void composite_backward(const std::vector<TaggedGaussian>& gaussians, const CameraPose& pose,
                               const Camera& cam, const CompositeCache& cache, const Image& dl_drgb,
                               std::vector<GaussianGrads>& grads, const RenderOptions& opts = {}) {
    const int w = cam.width, h = cam.height;
    const size_t n = gaussians.size();
    if (grads.size() != n) grads.assign(n, {});

    std::vector<Vec2> d_mean(n, Vec2::Zero());
    std::vector<Mat2> d_conic(n, Mat2::Zero());
    std::vector<double> d_opacity(n, 0.0);
    std::vector<Vec3> d_color(n, Vec3::Zero());

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto& contribs = cache.pixels[static_cast<size_t>(y) * w + x];
            if (contribs.empty()) continue;
            const Vec3 dl(dl_drgb.at(x, y, 0), dl_drgb.at(x, y, 1), dl_drgb.at(x, y, 2));
            if (dl.isZero(0.0)) continue;
            Vec3 behind = Vec3::Zero();  // color composited behind the current splat
            for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                const auto& cb = *it;
                const auto gi = static_cast<size_t>(cb.gaussian);
                const ProjectedGaussian& pg = cache.projected[gi];
                d_color[gi] += cb.alpha * cb.transmittance * dl;
                const double d_alpha = dl.dot(cb.transmittance * (pg.color - behind));
                const bool saturated = pg.opacity * cb.falloff >= 1.0;  // alpha was clamped
                if (!saturated) {
                    d_opacity[gi] += d_alpha * cb.falloff;
                    const double d_falloff = d_alpha * pg.opacity;
                    const double d_d2 = -0.5 * cb.falloff * d_falloff;
                    const Vec2 delta(x - pg.mean.x(), y - pg.mean.y());
                    d_mean[gi] += d_d2 * (-2.0 * (pg.conic * delta));
                    d_conic[gi] += d_d2 * (delta * delta.transpose());
                }
                behind = cb.alpha * pg.color + (1.0 - cb.alpha) * behind;
            }
        }

    const Mat3 rcw = pose.rotation.toRotationMatrix();
    const Vec3 cam_center = pose.center();
    for (size_t i = 0; i < n; ++i) {
        const ProjectedGaussian& pg = cache.projected[i];
        if (pg.culled) continue;
        const TaggedGaussian& g = gaussians[i];
        GaussianGrads& gr = grads[i];

        gr.opacity += d_opacity[i];

        // color chain, with the optional degree-1 view dependence
        if (g.sh1.isZero(0.0)) {
            gr.color += d_color[i];
        } else {
            gr.color += d_color[i];
            const Vec3 rel = g.position - cam_center;
            const double dist = rel.norm();
            const Vec3 dir = rel / dist;
            gr.sh1 += d_color[i] * sh_basis1(dir).transpose();
            Eigen::Matrix<double, 3, 3> db_ddir;
            db_ddir << 0, -kSh1, 0, 0, 0, kSh1, -kSh1, 0, 0;
            const Vec3 d_dir = db_ddir.transpose() * (g.sh1.transpose() * d_color[i]);
            gr.position += (Mat3::Identity() - dir * dir.transpose()) / dist * d_dir;
        }

        if (d_mean[i].isZero(0.0) && d_conic[i].isZero(0.0)) continue;

        const Vec3 pc = pose.transform(g.position);
        const double zi = 1.0 / pc.z();
        Eigen::Matrix<double, 2, 3> jac;
        jac << cam.fx * zi, 0.0, -cam.fx * pc.x() * zi * zi,
               0.0, cam.fy * zi, -cam.fy * pc.y() * zi * zi;

        const Mat2 d_cov2 = -pg.conic * d_conic[i] * pg.conic;

        const Mat3 rot = g.rotation.normalized().toRotationMatrix();
        const Mat3 cov3 = rot * g.scale.cwiseProduct(g.scale).asDiagonal() * rot.transpose();
        const Mat3 cov_cam = rcw * cov3 * rcw.transpose();

        // screen mean and the Jacobian's own dependence on the camera point
        Vec3 d_pc = jac.transpose() * d_mean[i];
        Eigen::Matrix<double, 2, 3> djac[3];
        djac[0].setZero();
        djac[0](0, 2) = -cam.fx * zi * zi;
        djac[1].setZero();
        djac[1](1, 2) = -cam.fy * zi * zi;
        djac[2].setZero();
        djac[2](0, 0) = -cam.fx * zi * zi;
        djac[2](0, 2) = 2.0 * cam.fx * pc.x() * zi * zi * zi;
        djac[2](1, 1) = -cam.fy * zi * zi;
        djac[2](1, 2) = 2.0 * cam.fy * pc.y() * zi * zi * zi;
        for (int k = 0; k < 3; ++k)
            d_pc[k] += 2.0 * (d_cov2.cwiseProduct(djac[k] * cov_cam * jac.transpose())).sum();
        gr.position += rcw.transpose() * d_pc;

        const Mat3 d_cov3 = rcw.transpose() * (jac.transpose() * d_cov2 * jac) * rcw;
        const Mat3 rt_m_r = rot.transpose() * d_cov3 * rot;
        for (int k = 0; k < 3; ++k) gr.scale[k] += 2.0 * g.scale[k] * rt_m_r(k, k);

        const Mat3 d_rot = 2.0 * d_cov3 * rot * g.scale.cwiseProduct(g.scale).asDiagonal();
        const Quat qn = g.rotation.normalized();
        Vec4 d_qn;
        for (int k = 0; k < 4; ++k)
            d_qn[k] = (d_rot.cwiseProduct(detail::rotation_matrix_derivative(qn, k))).sum();
        // through the normalization q / |q|
        const Vec4 q_raw(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z());
        const double qnorm = q_raw.norm();
        const Vec4 q_unit = q_raw / qnorm;
        gr.rotation += (d_qn - q_unit * q_unit.dot(d_qn)) / qnorm;
    }
}

}  // namespace garad

#pragma once

#include "garad/splat_render.hpp"
#include "garad/ssim.hpp"

#include <functional>
#include <sstream>
#include <vector>

namespace garad {

/// Loss weighting: the outer photometric/penalty split plus the inner
/// L1-vs-SSIM mix inside the photometric term.
struct LossWeights {
    double lambda_p_ssim = 0.8;
    double lambda_dyn = 0.2;
    double lambda = 0.2;
};

/// Squared-opacity penalty over dynamic-labeled Gaussians.
inline double dynamic_penalty(const std::vector<TaggedGaussian>& scene) {
    double s = 0.0;
    for (const auto& g : scene)
        if (g.dynamic()) s += g.opacity * g.opacity;
    return s;
}

/// Scalar total loss from an already-rendered static image.
inline double total_loss_value(const Image& rendered_rgb, const Image& gt,
                               const std::vector<TaggedGaussian>& scene, const LossWeights& w) {
    return w.lambda_p_ssim * photometric_ssim_loss(rendered_rgb, gt, w.lambda) +
           w.lambda_dyn * dynamic_penalty(scene);
}

struct LossAndGradients {
    double loss = 0.0;
    double photometric = 0.0;
    double penalty = 0.0;
    std::vector<GaussianGrads> grads;  // indexed like the scene vector
    RenderedImage rendered;
};

/// Renders the static subset, evaluates the total loss against the ground
/// truth, and backpropagates. Static Gaussians receive photometric gradients;
/// dynamic ones only the 2 * lambda_dyn * alpha opacity term.
inline LossAndGradients compute_loss_and_gradients(const std::vector<TaggedGaussian>& scene,
                                                   const CameraPose& pose, const Camera& cam,
                                                   const Image& gt, const LossWeights& w,
                                                   const RenderOptions& ropts = {}) {
    LossAndGradients out;
    out.grads.assign(scene.size(), {});

    std::vector<TaggedGaussian> statics;
    std::vector<size_t> index_map;
    statics.reserve(scene.size());
    for (size_t i = 0; i < scene.size(); ++i)
        if (!scene[i].dynamic()) {
            statics.push_back(scene[i]);
            index_map.push_back(i);
        }

    CompositeCache cache;
    out.rendered = composite(statics, pose, cam, ropts, &cache);

    Image photo_grad;
    out.photometric = photometric_ssim_loss(out.rendered.rgb, gt, w.lambda, &photo_grad);
    for (auto& v : photo_grad.data()) v *= w.lambda_p_ssim;

    std::vector<GaussianGrads> static_grads(statics.size());
    composite_backward(statics, pose, cam, cache, photo_grad, static_grads, ropts);
    for (size_t si = 0; si < statics.size(); ++si) out.grads[index_map[si]] = static_grads[si];

    out.penalty = dynamic_penalty(scene);
    for (size_t i = 0; i < scene.size(); ++i)
        if (scene[i].dynamic()) out.grads[i].opacity += 2.0 * w.lambda_dyn * scene[i].opacity;

    out.loss = w.lambda_p_ssim * out.photometric + w.lambda_dyn * out.penalty;
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian pyramid of the supervision images
// ---------------------------------------------------------------------------

struct PyramidLevel {
    int level = 0;       // 0 is full resolution
    Image image;
    double scale = 1.0;  // 2^level
};

/// Blur-then-decimate chain; level sizes follow ceil halving. Stops early
/// (with fewer levels) once an image falls below the kernel size.
inline std::vector<PyramidLevel> build_pyramid(const Image& gt, int levels) {
    if (levels < 1) throw Error("build_pyramid: levels must be >= 1");
    std::vector<PyramidLevel> pyr;
    pyr.push_back({0, gt, 1.0});
    for (int l = 1; l < levels; ++l) {
        const Image& prev = pyr.back().image;
        if (prev.width() < 5 || prev.height() < 5) break;
        pyr.push_back({l, decimate2(gaussian_blur5(prev)), std::pow(2.0, l)});
    }
    return pyr;
}

// ---------------------------------------------------------------------------
// Coarse-to-fine optimization
// ---------------------------------------------------------------------------

struct SgdRates {
    double color = 0.0025;
    double opacity = 0.05;
    double position = 1.6e-4;  // multiplied by the scene extent
    double scale = 0.005;
    double rotation = 0.001;
};

struct OptimizeOptions {
    int levels = 3;
    std::vector<int> iterations_per_level = {30, 30, 40};  // coarse to fine
    SgdRates rates;
    LossWeights weights;
    RenderOptions render;
    int sh_degree = 0;
    double divergence_factor = 10.0;
};

struct Keyframe {
    CameraPose pose;
    Image gt_rgb;
};

struct OptimizeTraceRow {
    int iter = 0;
    int level = 0;
    double loss = 0.0;
};

struct OptimizeResult {
    std::vector<OptimizeTraceRow> trace;
    bool diverged = false;
};

/// Bounding-box diagonal of the scene's Gaussian positions.
inline double scene_extent(const std::vector<TaggedGaussian>& scene) {
    if (scene.empty()) return 1.0;
    Vec3 lo = scene.front().position, hi = scene.front().position;
    for (const auto& g : scene) {
        lo = lo.cwiseMin(g.position);
        hi = hi.cwiseMax(g.position);
    }
    const double d = (hi - lo).norm();
    return d > 1e-9 ? d : 1.0;
}

inline void sgd_step(TaggedGaussian& g, const GaussianGrads& gr, const SgdRates& rates, double extent,
                     int sh_degree) {
    g.color -= rates.color * gr.color;
    g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
    if (sh_degree >= 1) g.sh1 -= rates.color * gr.sh1;
    g.opacity = std::clamp(g.opacity - rates.opacity * gr.opacity, 0.0, 1.0);
    g.position -= rates.position * extent * gr.position;
    g.scale = (g.scale - rates.scale * gr.scale).cwiseMax(1e-6);
    Vec4 q(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z());
    q -= rates.rotation * gr.rotation;
    g.rotation = Quat(q[0], q[1], q[2], q[3]).normalized();
}

/// Coarse-to-fine schedule: the scene is optimized against the top pyramid
/// level first, then progressively down to full resolution, rendering at each
/// level's decimated intrinsics. Keyframes are cycled one per iteration.
inline OptimizeResult optimize_coarse_to_fine(std::vector<TaggedGaussian>& scene,
                                              const std::vector<Keyframe>& keyframes, const Camera& cam,
                                              const OptimizeOptions& opts = {}) {
    if (keyframes.empty()) throw Error("optimize_coarse_to_fine: need at least one keyframe");
    OptimizeResult result;

    std::vector<std::vector<PyramidLevel>> pyramids;
    pyramids.reserve(keyframes.size());
    int levels = opts.levels;
    for (const auto& kf : keyframes) {
        pyramids.push_back(build_pyramid(kf.gt_rgb, opts.levels));
        levels = std::min(levels, static_cast<int>(pyramids.back().size()));
    }

    const double extent = scene_extent(scene);
    int global_iter = 0;
    size_t kf_cursor = 0;
    double initial_loss = -1.0;
    for (int level = levels - 1; level >= 0; --level) {
        const Camera level_cam = cam.scaled(std::pow(2.0, level));
        const size_t sched = static_cast<size_t>(levels - 1 - level);
        const int iters = sched < opts.iterations_per_level.size() ? opts.iterations_per_level[sched] : 30;
        for (int it = 0; it < iters; ++it, ++global_iter) {
            const auto& kf = keyframes[kf_cursor];
            const auto& gt = pyramids[kf_cursor][static_cast<size_t>(level)].image;
            kf_cursor = (kf_cursor + 1) % keyframes.size();

            auto lg = compute_loss_and_gradients(scene, kf.pose, level_cam, gt, opts.weights, opts.render);
            result.trace.push_back({global_iter, level, lg.loss});
            if (initial_loss < 0.0) initial_loss = lg.loss;
            if (initial_loss > 0.0 && lg.loss > opts.divergence_factor * initial_loss) {
                result.diverged = true;
                return result;
            }
            for (size_t i = 0; i < scene.size(); ++i)
                sgd_step(scene[i], lg.grads[i], opts.rates, extent, opts.sh_degree);
        }
    }
    return result;
}

inline std::string trace_csv(const std::vector<OptimizeTraceRow>& trace) {
    std::ostringstream os;
    os << "iter,level,loss\n";
    for (const auto& row : trace) os << row.iter << "," << row.level << "," << row.loss << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Pruning and densification
// ---------------------------------------------------------------------------

struct PruneOptions {
    double min_opacity = 0.005;
    double max_scale_fraction = 0.5;  // of the scene extent
};

struct PruneDensifyResult {
    std::vector<std::int64_t> pruned;
    std::vector<std::int64_t> inserted;
};

/// Prunes static Gaussians with vanishing opacity or outsized footprint.
/// Dynamic-labeled Gaussians are exempt here (only the retention window may
/// remove them). Densification inserts Gaussians for unlinked observations.
inline PruneDensifyResult prune_and_densify(GaussianMap& map, const PruneOptions& opts,
                                            const FrameObservations& obs, const CameraPose& pose,
                                            const Camera& cam, const Image* rgb = nullptr) {
    PruneDensifyResult result;
    const auto snap = map.snapshot();
    std::vector<TaggedGaussian> all(snap.begin(), snap.end());
    const double extent = scene_extent(all);
    for (const auto& g : snap) {
        if (g.dynamic()) continue;
        if (g.opacity < opts.min_opacity || g.scale.maxCoeff() > opts.max_scale_fraction * extent)
            result.pruned.push_back(g.id);
    }
    for (auto id : result.pruned) map.erase(id);
    result.inserted = map.insert_from_features(obs, pose, cam, rgb);
    return result;
}

}  // namespace garad

#pragma once

#include "garad/core.hpp"
#include "garad/image.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <vector>

namespace garad {

enum class GaussianLabel : std::uint8_t { kStatic = 0, kDynamic = 1 };

/// Per-Gaussian motion statistics consumed by the static/dynamic labeling.
/// Running forms: means are incremental, depth spread is Welford.
struct MotionStats {
    double mean_reproj_error = 0.0;      // pixels
    double depth_variation = 0.0;        // meters, sample standard deviation
    int observation_count = 0;
    double mean_epipolar_distance = 0.0; // pixels

    // accumulator state
    double depth_mean = 0.0;
    double depth_m2 = 0.0;
    int epipolar_count = 0;

    void add_reproj(double err) {
        // observation_count is incremented by the caller exactly once per accepted observation
        mean_reproj_error += (err - mean_reproj_error) / observation_count;
    }

    void add_depth(double depth) {
        const double delta = depth - depth_mean;
        depth_mean += delta / observation_count;
        depth_m2 += delta * (depth - depth_mean);
        depth_variation = observation_count > 1 ? std::sqrt(depth_m2 / (observation_count - 1)) : 0.0;
    }

    void add_epipolar(double dist) {
        ++epipolar_count;
        mean_epipolar_distance += (dist - mean_epipolar_distance) / epipolar_count;
    }

    /// Statistic vector in model component order: reproj, depth, count, epipolar.
    Vec4 as_vector() const {
        return {mean_reproj_error, depth_variation, static_cast<double>(observation_count),
                mean_epipolar_distance};
    }
};

/// A 3D splatting primitive carrying a motion label, its per-keyframe label
/// history, and accumulated motion statistics.
struct TaggedGaussian {
    std::int64_t id = -1;
    Vec3 position = Vec3::Zero();
    Quat rotation = Quat::Identity();
    Vec3 scale = Vec3::Ones();          // per-axis standard deviations, meters
    double opacity = 0.5;
    Vec3 color = Vec3::Constant(0.5);   // degree-0 SH as plain RGB
    Mat3 sh1 = Mat3::Zero();            // optional degree-1 coefficients, rows = RGB, cols = basis
    GaussianLabel label = GaussianLabel::kStatic;
    std::deque<std::uint8_t> label_history;
    MotionStats stats;
    Vec2 last_pixel = Vec2::Zero();
    int last_obs_frame = -1;

    bool dynamic() const { return label == GaussianLabel::kDynamic; }
};

/// Per-frame 2D feature observations, each tied to a Gaussian identity.
/// Stands in for the front-end's matched feature points.
struct FrameObservations {
    int frame_id = 0;
    double timestamp = 0.0;
    struct Item {
        std::int64_t gaussian_id = -1;
        Vec2 pixel = Vec2::Zero();
        double depth = 0.0;
        bool valid = true;
    };
    std::vector<Item> items;
};

struct EpipolarResult {
    double distance = 0.0;
    bool degenerate = false;
};

/// Distance of pixel_cur from the epipolar line induced by pixel_prev under
/// the fundamental matrix of `rel` (prev camera frame -> cur camera frame).
/// A near-zero baseline is not an error: pure-rotation frames return 0 with
/// the degenerate flag so callers can skip the sample.
inline EpipolarResult compute_epipolar_distance(const Vec2& pixel_prev, const Vec2& pixel_cur,
                                                const CameraPose& rel, const Camera& cam) {
    if (rel.translation.norm() < 1e-9) return {0.0, true};
    const Mat3 e = skew(rel.translation) * rel.rotation.toRotationMatrix();
    const Mat3 k_inv = cam.matrix().inverse();
    const Mat3 f = k_inv.transpose() * e * k_inv;
    const Vec3 line = f * Vec3(pixel_prev.x(), pixel_prev.y(), 1.0);
    const double denom = std::hypot(line.x(), line.y());
    if (denom < 1e-15) return {0.0, true};
    const double d = std::abs(line.dot(Vec3(pixel_cur.x(), pixel_cur.y(), 1.0))) / denom;
    return {d, false};
}

/// Owns the Tagged Gaussian store and the motion-statistic bookkeeping.
/// Single writer; snapshots are value copies and safe to share.
class GaussianMap {
public:
    explicit GaussianMap(int history_capacity = 11) : history_capacity_(history_capacity) {}

    bool contains(std::int64_t id) const { return gaussians_.count(id) != 0; }
    size_t size() const { return gaussians_.size(); }

    TaggedGaussian& get(std::int64_t id) {
        auto it = gaussians_.find(id);
        if (it == gaussians_.end()) throw Error("GaussianMap: unknown gaussian id " + std::to_string(id));
        return it->second;
    }
    const TaggedGaussian& get(std::int64_t id) const {
        auto it = gaussians_.find(id);
        if (it == gaussians_.end()) throw Error("GaussianMap: unknown gaussian id " + std::to_string(id));
        return it->second;
    }

    /// Creates Gaussians for observations not yet linked to one. New Gaussians
    /// are back-projected, labeled static, opacity 0.5, with an isotropic
    /// one-pixel footprint (depth / fx per axis). Rejected observations
    /// (bad depth, out of bounds) are skipped and counted.
    std::vector<std::int64_t> insert_from_features(const FrameObservations& obs, const CameraPose& pose,
                                                   const Camera& cam, const Image* rgb = nullptr,
                                                   int* rejected_out = nullptr) {
        std::vector<std::int64_t> created;
        int rejected = 0;
        for (const auto& item : obs.items) {
            if (!item.valid) continue;
            if (contains(item.gaussian_id)) continue;
            if (item.depth <= 0.0 || !cam.contains(item.pixel)) {
                ++rejected;
                continue;
            }
            TaggedGaussian g;
            g.id = item.gaussian_id;
            g.position = back_project(pose, cam, item.pixel, item.depth);
            g.scale = Vec3::Constant(item.depth / cam.fx);
            g.opacity = 0.5;
            if (rgb && !rgb->empty()) {
                const int px = static_cast<int>(std::lround(item.pixel.x()));
                const int py = static_cast<int>(std::lround(item.pixel.y()));
                for (int c = 0; c < 3; ++c)
                    g.color[c] = rgb->at(std::clamp(px, 0, rgb->width() - 1),
                                         std::clamp(py, 0, rgb->height() - 1),
                                         rgb->channels() == 3 ? c : 0);
            }
            g.label = GaussianLabel::kStatic;
            g.last_pixel = item.pixel;
            g.last_obs_frame = obs.frame_id;
            g.stats.observation_count = 1;
            g.stats.add_reproj(0.0);
            g.stats.add_depth(item.depth);
            gaussians_.emplace(g.id, std::move(g));
            created.push_back(item.gaussian_id);
        }
        total_rejected_ += rejected;
        if (rejected_out) *rejected_out = rejected;
        return created;
    }

    /// Folds one observation into the Gaussian's running statistics.
    /// Projection behind the camera skips the observation (counted as a
    /// diagnostic); a degenerate epipolar baseline skips only that statistic.
    const MotionStats& accumulate_observation(std::int64_t id, const Vec2& pixel, double depth,
                                              const CameraPose& pose, const Camera& cam,
                                              const CameraPose& prev_pose, int frame_id = -1) {
        TaggedGaussian& g = get(id);
        const auto proj = try_project(pose, cam, g.position);
        if (!proj) {
            ++skipped_behind_camera_;
            return g.stats;
        }
        if (g.last_obs_frame >= 0) {
            const auto epi = compute_epipolar_distance(g.last_pixel, pixel, relative_pose(pose, prev_pose), cam);
            if (!epi.degenerate) g.stats.add_epipolar(epi.distance);
        }
        ++g.stats.observation_count;
        g.stats.add_reproj((pixel - *proj).norm());
        g.stats.add_depth(depth);
        g.last_pixel = pixel;
        if (frame_id >= 0) g.last_obs_frame = frame_id;
        return g.stats;
    }

    /// Appends a per-keyframe label to the ring (capacity = window + 1) and
    /// sets the current label.
    void push_label(std::int64_t id, GaussianLabel label) {
        TaggedGaussian& g = get(id);
        g.label = label;
        g.label_history.push_back(static_cast<std::uint8_t>(label));
        while (static_cast<int>(g.label_history.size()) > history_capacity_) g.label_history.pop_front();
    }

    void erase(std::int64_t id) { gaussians_.erase(id); }

    /// Immutable view in id order, optionally filtered by label.
    std::vector<TaggedGaussian> snapshot(std::optional<GaussianLabel> filter = std::nullopt) const {
        std::vector<TaggedGaussian> out;
        out.reserve(gaussians_.size());
        for (const auto& [id, g] : gaussians_)
            if (!filter || g.label == *filter) out.push_back(g);
        return out;
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        for (auto& [id, g] : gaussians_) fn(g);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (const auto& [id, g] : gaussians_) fn(g);
    }

    int history_capacity() const { return history_capacity_; }
    std::int64_t total_rejected() const { return total_rejected_; }
    std::int64_t skipped_behind_camera() const { return skipped_behind_camera_; }

private:
    int history_capacity_;
    std::map<std::int64_t, TaggedGaussian> gaussians_;
    std::int64_t total_rejected_ = 0;
    std::int64_t skipped_behind_camera_ = 0;
};

}  // namespace garad

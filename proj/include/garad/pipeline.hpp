#pragma once

#include "garad/config.hpp"
#include "garad/crf.hpp"
#include "garad/flow_model.hpp"
#include "garad/pose_solver.hpp"
#include "garad/render_optim.hpp"
#include "garad/scene_sim.hpp"
#include "garad/static_model.hpp"
#include "garad/trajectory.hpp"
#include "garad/tum_io.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

namespace garad {

struct PipelineConfig {
    int bootstrap_frames = 10;
    int keyframe_stride = 1;
    std::uint64_t seed = 1;
    bool label_dump = false;
    bool threaded = false;
    bool disable_crf = false;
    bool disable_flow = false;
    bool disable_penalty = false;
    bool disable_mapping = false;

    FitOptions model;
    int model_refit_interval = 1;  // keyframes; 0 disables refitting

    int crf_iterations = 5;
    double omega_appearance = 1.0;
    double omega_position = 1.0;
    // 0 selects the data-driven bandwidth
    double bandwidth_reproj = 0.0;
    double bandwidth_obs_count = 0.0;
    double bandwidth_position = 0.0;
    double bandwidth_pixel = 0.0;

    int retention_window = 10;
    double delete_threshold = 0.9;

    LkOptions lk;
    double chi2_threshold = 5.991;
    int flow_max_static_points = 200;
    int flow_min_samples = 3;
    double flow_covariance_floor = FlowModel::kCovarianceFloor;

    PoseSolveOptions pose;
    OptimizeOptions optimize;
    int optimize_keyframes = 1;
    PruneOptions prune;
    double depth_scale = kTumDepthScale;

    static PipelineConfig from_config(const Config& cfg) {
        cfg.validate_section("pipeline", {"keyframe_stride", "seed", "label_dump", "threaded",
                                          "disable_crf", "disable_flow", "disable_penalty",
                                          "disable_mapping"});
        cfg.validate_section("bootstrap", {"frames"});
        cfg.validate_section("model", {"min_samples", "variance_floor", "refit_interval"});
        cfg.validate_section("crf", {"iterations", "omega_appearance", "omega_position",
                                     "bandwidth_reproj", "bandwidth_obs_count", "bandwidth_position",
                                     "bandwidth_pixel"});
        cfg.validate_section("retention", {"window", "delete_threshold"});
        cfg.validate_section("flow", {"window", "levels", "max_iterations", "epsilon",
                                      "min_eig_threshold", "chi2_threshold", "max_static_points",
                                      "min_samples", "covariance_floor"});
        cfg.validate_section("pose", {"huber_delta", "robust", "initial_lambda", "lambda_factor",
                                      "max_iterations", "update_tolerance", "cost_tolerance",
                                      "inlier_chi2"});
        cfg.validate_section("render", {"dilation", "alpha_min", "transmittance_min", "sh_degree"});
        cfg.validate_section("loss", {"lambda_p_ssim", "lambda_dyn", "lambda"});
        cfg.validate_section("pyramid", {"levels", "iterations", "lr_color", "lr_opacity",
                                         "lr_position", "lr_scale", "lr_rotation", "keyframes"});
        cfg.validate_section("prune", {"min_opacity", "max_scale_fraction"});
        cfg.validate_section("io", {"depth_scale"});

        PipelineConfig c;
        c.bootstrap_frames = cfg.get_int("bootstrap.frames", c.bootstrap_frames);
        c.keyframe_stride = cfg.get_int("pipeline.keyframe_stride", c.keyframe_stride);
        c.seed = static_cast<std::uint64_t>(cfg.get_double("pipeline.seed", static_cast<double>(c.seed)));
        c.label_dump = cfg.get_bool("pipeline.label_dump", c.label_dump);
        c.threaded = cfg.get_bool("pipeline.threaded", c.threaded);
        c.disable_crf = cfg.get_bool("pipeline.disable_crf", c.disable_crf);
        c.disable_flow = cfg.get_bool("pipeline.disable_flow", c.disable_flow);
        c.disable_penalty = cfg.get_bool("pipeline.disable_penalty", c.disable_penalty);
        c.disable_mapping = cfg.get_bool("pipeline.disable_mapping", c.disable_mapping);

        c.model.min_samples = cfg.get_int("model.min_samples", c.model.min_samples);
        c.model.variance_floor = cfg.get_double("model.variance_floor", c.model.variance_floor);
        c.model_refit_interval = cfg.get_int("model.refit_interval", c.model_refit_interval);

        c.crf_iterations = cfg.get_int("crf.iterations", c.crf_iterations);
        c.omega_appearance = cfg.get_double("crf.omega_appearance", c.omega_appearance);
        c.omega_position = cfg.get_double("crf.omega_position", c.omega_position);
        c.bandwidth_reproj = cfg.get_double("crf.bandwidth_reproj", c.bandwidth_reproj);
        c.bandwidth_obs_count = cfg.get_double("crf.bandwidth_obs_count", c.bandwidth_obs_count);
        c.bandwidth_position = cfg.get_double("crf.bandwidth_position", c.bandwidth_position);
        c.bandwidth_pixel = cfg.get_double("crf.bandwidth_pixel", c.bandwidth_pixel);

        c.retention_window = cfg.get_int("retention.window", c.retention_window);
        c.delete_threshold = cfg.get_double("retention.delete_threshold", c.delete_threshold);

        c.lk.window = cfg.get_int("flow.window", c.lk.window);
        c.lk.levels = cfg.get_int("flow.levels", c.lk.levels);
        c.lk.max_iterations = cfg.get_int("flow.max_iterations", c.lk.max_iterations);
        c.lk.epsilon = cfg.get_double("flow.epsilon", c.lk.epsilon);
        c.lk.min_eig_threshold = cfg.get_double("flow.min_eig_threshold", c.lk.min_eig_threshold);
        c.chi2_threshold = cfg.get_double("flow.chi2_threshold", c.chi2_threshold);
        c.flow_max_static_points = cfg.get_int("flow.max_static_points", c.flow_max_static_points);
        c.flow_min_samples = cfg.get_int("flow.min_samples", c.flow_min_samples);
        c.flow_covariance_floor = cfg.get_double("flow.covariance_floor", c.flow_covariance_floor);

        c.pose.huber_delta = cfg.get_double("pose.huber_delta", c.pose.huber_delta);
        c.pose.robust = cfg.get_bool("pose.robust", c.pose.robust);
        c.pose.initial_lambda = cfg.get_double("pose.initial_lambda", c.pose.initial_lambda);
        c.pose.lambda_factor = cfg.get_double("pose.lambda_factor", c.pose.lambda_factor);
        c.pose.max_iterations = cfg.get_int("pose.max_iterations", c.pose.max_iterations);
        c.pose.update_tolerance = cfg.get_double("pose.update_tolerance", c.pose.update_tolerance);
        c.pose.cost_tolerance = cfg.get_double("pose.cost_tolerance", c.pose.cost_tolerance);
        c.pose.inlier_chi2 = cfg.get_double("pose.inlier_chi2", c.pose.inlier_chi2);

        c.optimize.render.dilation = cfg.get_double("render.dilation", c.optimize.render.dilation);
        c.optimize.render.alpha_min = cfg.get_double("render.alpha_min", c.optimize.render.alpha_min);
        c.optimize.render.transmittance_min =
            cfg.get_double("render.transmittance_min", c.optimize.render.transmittance_min);
        c.optimize.sh_degree = cfg.get_int("render.sh_degree", c.optimize.sh_degree);

        c.optimize.weights.lambda_p_ssim = cfg.get_double("loss.lambda_p_ssim", 0.8);
        c.optimize.weights.lambda_dyn = cfg.get_double("loss.lambda_dyn", 0.2);
        c.optimize.weights.lambda = cfg.get_double("loss.lambda", 0.2);

        c.optimize.levels = cfg.get_int("pyramid.levels", c.optimize.levels);
        c.optimize.iterations_per_level =
            cfg.get_int_list("pyramid.iterations", c.optimize.iterations_per_level);
        c.optimize.rates.color = cfg.get_double("pyramid.lr_color", c.optimize.rates.color);
        c.optimize.rates.opacity = cfg.get_double("pyramid.lr_opacity", c.optimize.rates.opacity);
        c.optimize.rates.position = cfg.get_double("pyramid.lr_position", c.optimize.rates.position);
        c.optimize.rates.scale = cfg.get_double("pyramid.lr_scale", c.optimize.rates.scale);
        c.optimize.rates.rotation = cfg.get_double("pyramid.lr_rotation", c.optimize.rates.rotation);
        c.optimize_keyframes = cfg.get_int("pyramid.keyframes", c.optimize_keyframes);

        c.prune.min_opacity = cfg.get_double("prune.min_opacity", c.prune.min_opacity);
        c.prune.max_scale_fraction = cfg.get_double("prune.max_scale_fraction", c.prune.max_scale_fraction);
        c.depth_scale = cfg.get_double("io.depth_scale", c.depth_scale);
        return c;
    }
};

struct RunReport {
    double ate_rmse = -1.0;
    double ate_std = -1.0;
    double dyn_precision = -1.0;
    double dyn_recall = -1.0;
    double psnr_db = -1.0;
    double render_ssim = -1.0;
    int frames = 0;
    int keyframes = 0;
    int tracking_failures = 0;
    int deleted_gaussians = 0;
    int recovered_gaussians = 0;
    int false_dynamic = 0;
    int map_size = 0;
    double timing_tracking_s = 0.0;
    double timing_crf_s = 0.0;
    double timing_flow_s = 0.0;
    double timing_optimize_s = 0.0;
    double timing_total_s = 0.0;
    std::map<std::string, std::string> config_echo;
};

inline double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DataError("psnr: image dimensions differ");
    double mse = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse < 1e-12) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

struct PipelineResult {
    Trajectory trajectory;  // camera-to-world
    RunReport report;
    GaussianMap map{11};
    std::set<std::int64_t> deleted_ids;
    std::set<std::int64_t> recovered_ids;
};

namespace detail {

/// Spatially stratified subset selection over image grid cells.
inline std::vector<size_t> stratified_pick(const std::vector<Vec2>& pixels, const Camera& cam,
                                           int max_count) {
    const int cells_x = 10, cells_y = 8;
    std::vector<std::vector<size_t>> cells(static_cast<size_t>(cells_x) * cells_y);
    for (size_t i = 0; i < pixels.size(); ++i) {
        const int cx = std::clamp(static_cast<int>(pixels[i].x() / cam.width * cells_x), 0, cells_x - 1);
        const int cy = std::clamp(static_cast<int>(pixels[i].y() / cam.height * cells_y), 0, cells_y - 1);
        cells[static_cast<size_t>(cy) * cells_x + cx].push_back(i);
    }
    std::vector<size_t> picked;
    std::vector<size_t> cursor(cells.size(), 0);
    size_t remaining = pixels.size();
    while (static_cast<int>(picked.size()) < max_count && remaining > 0) {
        for (size_t c = 0; c < cells.size() && static_cast<int>(picked.size()) < max_count; ++c) {
            if (cursor[c] >= cells[c].size()) continue;
            picked.push_back(cells[c][cursor[c]++]);
            --remaining;
        }
    }
    return picked;
}

}  // namespace detail

/// Message from tracking to mapping: one frame with its pose estimate.
struct TrackMsg {
    int frame = 0;
    double timestamp = 0.0;
    CameraPose pose;  // world-to-camera estimate
    bool track_failed = false;
    int correspondences_used = 0;
    FrameObservations obs;
    Image rgb;
    Image gray;
};

/// Mapping's reply, applied by tracking at the next frame boundary.
struct MapFeedback {
    std::shared_ptr<const std::vector<std::pair<std::int64_t, Vec3>>> static_points;
    CameraPose refined_pose;
    bool has_pose = false;
};

/// The tracking/mapping engine. track_one is pure given a MapFeedback;
/// map_one owns all mutable state, so a sequential driver and the two-thread
/// driver produce identical results for the same message order.
class PipelineEngine {
public:
    PipelineEngine(const TumSequence& seq, const PipelineConfig& cfg,
                   const std::filesystem::path& out_dir = {})
        : seq_(seq), cfg_(cfg), out_dir_(out_dir), map_(cfg.retention_window + 1) {
        if (!seq.camera) throw DataError("sequence has no camera.txt intrinsics");
        cam_ = *seq.camera;
        if (static_cast<int>(seq.frames.size()) < cfg.bootstrap_frames)
            throw DataError("bootstrap requires " + std::to_string(cfg.bootstrap_frames) +
                            " frames, sequence has " + std::to_string(seq.frames.size()));
        if (seq.tracks.empty())
            throw DataError("sequence has no tracks.txt (front-end feature tracks)");
        tracks_by_frame_.resize(seq.frames.size());
        for (const auto& f : seq.tracks)
            if (f.frame_id >= 0 && f.frame_id < static_cast<int>(seq.frames.size()))
                tracks_by_frame_[static_cast<size_t>(f.frame_id)] = f;
        frame_poses_.resize(seq.frames.size(), CameraPose::identity());
        if (cfg_.label_dump && !out_dir_.empty())
            std::filesystem::create_directories(out_dir_ / "labels");
    }

    int frame_count() const { return static_cast<int>(seq_.frames.size()); }
    const Camera& camera() const { return cam_; }

    TrackMsg track_one(int t, const MapFeedback& feedback) {
        const auto t0 = std::chrono::steady_clock::now();
        TrackMsg msg;
        msg.frame = t;
        msg.timestamp = seq_.frames[static_cast<size_t>(t)].timestamp;
        msg.obs = tracks_by_frame_[static_cast<size_t>(t)];
        msg.obs.frame_id = t;
        msg.rgb = seq_.load_rgb(static_cast<size_t>(t));
        msg.gray = luma(msg.rgb);

        if (!feedback.has_pose || !feedback.static_points || feedback.static_points->empty()) {
            msg.pose = CameraPose::identity(msg.timestamp);  // first frame anchors the world
            timing_tracking_ += elapsed(t0);
            return msg;
        }

        std::map<std::int64_t, Vec3> static_lookup(feedback.static_points->begin(),
                                                   feedback.static_points->end());
        std::vector<Correspondence> cs;
        for (const auto& item : msg.obs.items) {
            if (!item.valid) continue;
            auto it = static_lookup.find(item.gaussian_id);
            if (it == static_lookup.end()) continue;
            cs.push_back({it->second, item.pixel, Mat2::Identity()});
        }
        msg.correspondences_used = static_cast<int>(cs.size());

        CameraPose init = feedback.refined_pose;  // constant-position motion model
        init.timestamp = msg.timestamp;
        if (cs.size() < 6) {
            msg.pose = init;
            msg.track_failed = true;
        } else {
            const auto res = solve_pose(cs, init, cam_, cfg_.pose);
            msg.pose = res.converged ? res.pose : init;
            msg.track_failed = !res.converged;
        }
        msg.pose.timestamp = msg.timestamp;
        timing_tracking_ += elapsed(t0);
        return msg;
    }

    MapFeedback map_one(const TrackMsg& msg) {
        const int t = msg.frame;
        frame_poses_[static_cast<size_t>(t)] = msg.pose;
        if (msg.track_failed) ++tracking_failures_;

        const bool bootstrap = t < cfg_.bootstrap_frames;
        const bool keyframe = bootstrap || ((t - cfg_.bootstrap_frames) % cfg_.keyframe_stride == 0);

        CameraPose refined = msg.pose;
        if (keyframe) {
            accumulate_stats(msg);
            if (bootstrap) {
                map_.insert_from_features(msg.obs, msg.pose, cam_, &msg.rgb);
                if (t == cfg_.bootstrap_frames - 1) fit_bootstrap_model();
            } else {
                ++keyframes_;
                if (!cfg_.disable_crf) run_crf(t);
                if (!cfg_.disable_crf && !cfg_.disable_flow) run_flow_recovery(msg);
                if (!cfg_.disable_crf) {
                    const auto deleted = apply_retention(map_, cfg_.retention_window, cfg_.delete_threshold);
                    deleted_ids_.insert(deleted.begin(), deleted.end());
                }
                refined = refine_pose(msg);
                frame_poses_[static_cast<size_t>(t)] = refined;
                if (!cfg_.disable_mapping) run_optimize(msg, refined);
                prune_and_densify(map_, cfg_.prune, msg.obs, refined, cam_, &msg.rgb);
                maybe_refit_model();
            }
        }

        trajectory_entry(t, refined);
        if (keyframe) {
            prev_keyframe_gray_ = msg.gray;
            prev_keyframe_frame_ = t;
            prev_obs_pixels_.clear();
            for (const auto& item : msg.obs.items)
                if (item.valid) prev_obs_pixels_[item.gaussian_id] = item.pixel;
        }

        MapFeedback fb;
        auto pts = std::make_shared<std::vector<std::pair<std::int64_t, Vec3>>>();
        map_.for_each([&](const TaggedGaussian& g) {
            if (!g.dynamic()) pts->push_back({g.id, g.position});
        });
        fb.static_points = std::move(pts);
        fb.refined_pose = refined;
        fb.has_pose = true;
        return fb;
    }

    PipelineResult finalize() {
        PipelineResult result;
        result.trajectory = trajectory_;
        result.map = map_;
        result.deleted_ids = deleted_ids_;
        result.recovered_ids = recovered_ids_;

        RunReport& r = result.report;
        r.frames = frame_count();
        r.keyframes = keyframes_;
        r.tracking_failures = tracking_failures_;
        r.deleted_gaussians = static_cast<int>(deleted_ids_.size());
        r.recovered_gaussians = static_cast<int>(recovered_ids_.size());
        r.map_size = static_cast<int>(map_.size());
        r.timing_tracking_s = timing_tracking_;
        r.timing_crf_s = timing_crf_;
        r.timing_flow_s = timing_flow_;
        r.timing_optimize_s = timing_optimize_;

        if (seq_.ground_truth) {
            const auto ate = evaluate_ate(trajectory_, *seq_.ground_truth);
            r.ate_rmse = ate.rmse;
            r.ate_std = ate.stddev;
        }
        if (!seq_.true_labels.empty()) label_metrics(r);
        if (!seq_.clean_renders.empty()) render_metrics(r);
        return result;
    }

private:
    static double elapsed(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    void trajectory_entry(int t, const CameraPose& pose_cw) {
        CameraPose wc = pose_cw.inverse();
        wc.timestamp = seq_.frames[static_cast<size_t>(t)].timestamp;
        trajectory_.push(wc);
    }

    void accumulate_stats(const TrackMsg& msg) {
        for (const auto& item : msg.obs.items) {
            if (!item.valid || !map_.contains(item.gaussian_id)) continue;
            const TaggedGaussian& g = map_.get(item.gaussian_id);
            const int prev_frame = g.last_obs_frame;
            const CameraPose prev_pose = prev_frame >= 0 && prev_frame < static_cast<int>(frame_poses_.size())
                                             ? frame_poses_[static_cast<size_t>(prev_frame)]
                                             : msg.pose;
            map_.accumulate_observation(item.gaussian_id, item.pixel, item.depth, msg.pose, cam_,
                                        prev_pose, msg.frame);
        }
    }

    void fit_bootstrap_model() {
        std::vector<MotionStats> samples;
        map_.for_each([&](const TaggedGaussian& g) {
            if (g.stats.observation_count >= 2) samples.push_back(g.stats);
        });
        model_ = fit_static_model(samples, cfg_.model);
    }

    void maybe_refit_model() {
        if (cfg_.model_refit_interval <= 0) return;
        if (keyframes_ % cfg_.model_refit_interval != 0) return;
        std::vector<MotionStats> samples;
        map_.for_each([&](const TaggedGaussian& g) {
            if (!g.dynamic() && g.stats.observation_count >= 2) samples.push_back(g.stats);
        });
        if (static_cast<int>(samples.size()) >= cfg_.model.min_samples)
            model_ = fit_static_model(samples, cfg_.model);
    }

    void run_crf(int t) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto snap = map_.snapshot();
        if (snap.empty()) return;
        std::optional<KernelBandwidths> bw;
        if (cfg_.bandwidth_reproj > 0.0 || cfg_.bandwidth_obs_count > 0.0 ||
            cfg_.bandwidth_position > 0.0 || cfg_.bandwidth_pixel > 0.0) {
            KernelBandwidths b = default_bandwidths(build_crf_problem(snap, model_).nodes);
            if (cfg_.bandwidth_reproj > 0.0) b.reproj = cfg_.bandwidth_reproj;
            if (cfg_.bandwidth_obs_count > 0.0) b.obs_count = cfg_.bandwidth_obs_count;
            if (cfg_.bandwidth_position > 0.0) b.position = cfg_.bandwidth_position;
            if (cfg_.bandwidth_pixel > 0.0) b.pixel = cfg_.bandwidth_pixel;
            bw = b;
        }
        const auto problem =
            build_crf_problem(snap, model_, cfg_.omega_appearance, cfg_.omega_position, bw);
        const auto res = mean_field_infer(problem, cfg_.crf_iterations);
        for (size_t i = 0; i < problem.nodes.size(); ++i)
            map_.push_label(problem.nodes[i].gaussian_id,
                            res.labels[i] == 1 ? GaussianLabel::kDynamic : GaussianLabel::kStatic);
        if (cfg_.label_dump && !out_dir_.empty()) {
            char name[64];
            std::snprintf(name, sizeof(name), "kf_%06d.txt", t);
            std::ofstream f(out_dir_ / "labels" / name);
            for (size_t i = 0; i < problem.nodes.size(); ++i)
                f << problem.nodes[i].gaussian_id << " " << res.labels[i] << " "
                  << res.marginals.q[i] << "\n";
        }
        timing_crf_ += elapsed(t0);
    }

    void run_flow_recovery(const TrackMsg& msg) {
        if (prev_keyframe_frame_ < 0 || prev_keyframe_gray_.empty()) return;
        const auto t0 = std::chrono::steady_clock::now();

        // current-frame observation lookup
        std::map<std::int64_t, Vec2> cur_pixels;
        for (const auto& item : msg.obs.items)
            if (item.valid) cur_pixels[item.gaussian_id] = item.pixel;

        std::vector<Vec2> static_px;
        std::vector<std::int64_t> cand_ids;
        std::vector<Vec2> cand_px;
        map_.for_each([&](const TaggedGaussian& g) {
            auto prev_it = prev_obs_pixels_.find(g.id);
            if (prev_it == prev_obs_pixels_.end() || cur_pixels.find(g.id) == cur_pixels.end()) return;
            if (g.dynamic()) {
                cand_ids.push_back(g.id);
                cand_px.push_back(prev_it->second);
            } else {
                static_px.push_back(prev_it->second);
            }
        });
        if (cand_ids.empty()) {
            timing_flow_ += elapsed(t0);
            return;
        }

        const auto picked = detail::stratified_pick(static_px, cam_, cfg_.flow_max_static_points);
        std::vector<Vec2> fit_px;
        fit_px.reserve(picked.size());
        for (auto i : picked) fit_px.push_back(static_px[i]);
        const auto static_flows = lk_flow(prev_keyframe_gray_, msg.gray, fit_px, cfg_.lk);
        std::vector<Vec2> valid_flows;
        for (const auto& fv : static_flows)
            if (fv.valid) valid_flows.push_back(fv.flow);
        if (static_cast<int>(valid_flows.size()) < cfg_.flow_min_samples) {
            timing_flow_ += elapsed(t0);
            return;  // not enough static support this keyframe
        }
        const FlowModel model = fit_flow_model(valid_flows, cfg_.flow_covariance_floor);

        RecoveryOptions ropts;
        ropts.chi2_threshold = cfg_.chi2_threshold;
        ropts.lk = cfg_.lk;
        const auto rec =
            verify_and_recover(map_, cand_ids, cand_px, prev_keyframe_gray_, msg.gray, model, ropts);
        recovered_ids_.insert(rec.recovered.begin(), rec.recovered.end());
        timing_flow_ += elapsed(t0);
    }

    CameraPose refine_pose(const TrackMsg& msg) {
        std::vector<Correspondence> cs;
        for (const auto& item : msg.obs.items) {
            if (!item.valid || !map_.contains(item.gaussian_id)) continue;
            const TaggedGaussian& g = map_.get(item.gaussian_id);
            if (g.dynamic()) continue;
            cs.push_back({g.position, item.pixel, Mat2::Identity()});
        }
        if (cs.size() < 6) return msg.pose;
        const auto res = solve_pose(cs, msg.pose, cam_, cfg_.pose);
        return res.converged ? res.pose : msg.pose;
    }

    void run_optimize(const TrackMsg& msg, const CameraPose& refined) {
        const auto t0 = std::chrono::steady_clock::now();
        recent_keyframes_.push_back({refined, msg.rgb});
        while (static_cast<int>(recent_keyframes_.size()) > std::max(1, cfg_.optimize_keyframes))
            recent_keyframes_.pop_front();

        auto scene = map_.snapshot();
        if (scene.empty()) {
            timing_optimize_ += elapsed(t0);
            return;
        }
        OptimizeOptions opts = cfg_.optimize;
        if (cfg_.disable_penalty) opts.weights.lambda_dyn = 0.0;
        std::vector<Keyframe> kfs(recent_keyframes_.begin(), recent_keyframes_.end());
        optimize_coarse_to_fine(scene, kfs, cam_, opts);
        for (const auto& g : scene) {
            if (!map_.contains(g.id)) continue;
            TaggedGaussian& m = map_.get(g.id);
            m.position = g.position;
            m.rotation = g.rotation;
            m.scale = g.scale;
            m.opacity = g.opacity;
            m.color = g.color;
            m.sh1 = g.sh1;
        }
        timing_optimize_ += elapsed(t0);
    }

    void label_metrics(RunReport& r) const {
        std::set<std::int64_t> predicted = deleted_ids_;
        map_.for_each([&](const TaggedGaussian& g) {
            if (g.dynamic()) predicted.insert(g.id);
        });
        int tp = 0, fp = 0, fn = 0;
        for (auto id : ever_inserted_) {
            auto it = seq_.true_labels.find(id);
            if (it == seq_.true_labels.end()) continue;
            const bool truly_dynamic = it->second == 1;
            const bool pred = predicted.count(id) != 0;
            if (pred && truly_dynamic) ++tp;
            else if (pred && !truly_dynamic) ++fp;
            else if (!pred && truly_dynamic) ++fn;
        }
        r.dyn_precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0;
        r.dyn_recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 1.0;
        r.false_dynamic = fp;
    }

    void render_metrics(RunReport& r) {
        const auto statics = map_.snapshot(GaussianLabel::kStatic);
        const int n = frame_count();
        const int samples = std::min(8, n);
        double psnr_sum = 0.0, ssim_sum = 0.0;
        int used = 0;
        for (int k = 0; k < samples; ++k) {
            const int t = samples == 1 ? 0 : k * (n - 1) / (samples - 1);
            if (static_cast<size_t>(t) >= seq_.clean_renders.size()) continue;
            const Image clean = read_ppm(seq_.clean_renders[static_cast<size_t>(t)]);
            const auto render =
                composite(statics, frame_poses_[static_cast<size_t>(t)], cam_, cfg_.optimize.render);
            psnr_sum += psnr(render.rgb, clean);
            ssim_sum += ssim(render.rgb, clean);
            ++used;
        }
        if (used > 0) {
            r.psnr_db = psnr_sum / used;
            r.render_ssim = ssim_sum / used;
        }
    }

public:
    // exposed for the engine drivers
    void note_inserted() {
        map_.for_each([&](const TaggedGaussian& g) { ever_inserted_.insert(g.id); });
    }

private:
    const TumSequence& seq_;
    PipelineConfig cfg_;
    std::filesystem::path out_dir_;
    Camera cam_;
    GaussianMap map_;
    StaticStatModel model_;
    std::vector<FrameObservations> tracks_by_frame_;
    std::vector<CameraPose> frame_poses_;
    Trajectory trajectory_;
    Image prev_keyframe_gray_;
    int prev_keyframe_frame_ = -1;
    std::map<std::int64_t, Vec2> prev_obs_pixels_;
    std::deque<Keyframe> recent_keyframes_;
    std::set<std::int64_t> deleted_ids_;
    std::set<std::int64_t> recovered_ids_;
    std::set<std::int64_t> ever_inserted_;
    int keyframes_ = 0;
    int tracking_failures_ = 0;
    double timing_tracking_ = 0.0;
    double timing_crf_ = 0.0;
    double timing_flow_ = 0.0;
    double timing_optimize_ = 0.0;
};

/// Sequential driver: tracking and mapping alternate per frame, mapping's
/// feedback applied before the next frame.
inline PipelineResult run_pipeline_sequential(const TumSequence& seq, const PipelineConfig& cfg,
                                              const std::filesystem::path& out_dir = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    PipelineEngine engine(seq, cfg, out_dir);
    MapFeedback feedback;
    for (int t = 0; t < engine.frame_count(); ++t) {
        const TrackMsg msg = engine.track_one(t, feedback);
        feedback = engine.map_one(msg);
        engine.note_inserted();
    }
    PipelineResult result = engine.finalize();
    result.report.timing_total_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

namespace detail {

template <typename T>
class MsgQueue {
public:
    void push(T v) {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return !full_; });
        slot_ = std::move(v);
        full_ = true;
        cv_.notify_all();
    }
    T pop() {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return full_; });
        T v = std::move(slot_);
        full_ = false;
        cv_.notify_all();
        return v;
    }

private:
    std::mutex m_;
    std::condition_variable cv_;
    T slot_{};
    bool full_ = false;
};

}  // namespace detail

/// Two-thread driver exchanging the same immutable messages in the same
/// order; produces results identical to the sequential driver.
inline PipelineResult run_pipeline_threaded(const TumSequence& seq, const PipelineConfig& cfg,
                                            const std::filesystem::path& out_dir = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    PipelineEngine engine(seq, cfg, out_dir);
    detail::MsgQueue<TrackMsg> track_q;
    detail::MsgQueue<MapFeedback> feedback_q;
    std::exception_ptr tracker_error;

    std::thread tracker([&] {
        try {
            MapFeedback feedback;
            for (int t = 0; t < engine.frame_count(); ++t) {
                track_q.push(engine.track_one(t, feedback));
                feedback = feedback_q.pop();
            }
        } catch (...) {
            tracker_error = std::current_exception();
        }
    });

    for (int t = 0; t < engine.frame_count(); ++t) {
        const TrackMsg msg = track_q.pop();
        feedback_q.push(engine.map_one(msg));
        engine.note_inserted();
    }
    tracker.join();
    if (tracker_error) std::rethrow_exception(tracker_error);

    PipelineResult result = engine.finalize();
    result.report.timing_total_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

inline PipelineResult run_pipeline(const TumSequence& seq, const PipelineConfig& cfg,
                                   const std::filesystem::path& out_dir = {}) {
    return cfg.threaded ? run_pipeline_threaded(seq, cfg, out_dir)
                        : run_pipeline_sequential(seq, cfg, out_dir);
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

/// Human-readable report; every metric field appears exactly once.
inline void write_report_text(const RunReport& r, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << std::setprecision(9);
    f << "garad run report\n";
    f << "frames: " << r.frames << "\n";
    f << "keyframes: " << r.keyframes << "\n";
    f << "tracking_failures: " << r.tracking_failures << "\n";
    f << "ate_rmse_m: " << r.ate_rmse << "\n";
    f << "ate_std_m: " << r.ate_std << "\n";
    f << "dyn_precision: " << r.dyn_precision << "\n";
    f << "dyn_recall: " << r.dyn_recall << "\n";
    f << "false_dynamic: " << r.false_dynamic << "\n";
    f << "psnr_db: " << r.psnr_db << "\n";
    f << "render_ssim: " << r.render_ssim << "\n";
    f << "deleted_gaussians: " << r.deleted_gaussians << "\n";
    f << "recovered_gaussians: " << r.recovered_gaussians << "\n";
    f << "map_size: " << r.map_size << "\n";
    f << "timing_tracking_s: " << r.timing_tracking_s << "\n";
    f << "timing_crf_s: " << r.timing_crf_s << "\n";
    f << "timing_flow_s: " << r.timing_flow_s << "\n";
    f << "timing_optimize_s: " << r.timing_optimize_s << "\n";
    f << "timing_total_s: " << r.timing_total_s << "\n";
    f << "config:\n";
    for (const auto& [k, v] : r.config_echo) f << "  " << k << " = " << v << "\n";
}

/// Machine-readable metrics; timing is deliberately excluded so identical
/// runs produce identical files.
inline void write_report_csv(const RunReport& r, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << std::setprecision(12);
    f << "metric,value\n";
    f << "frames," << r.frames << "\n";
    f << "keyframes," << r.keyframes << "\n";
    f << "tracking_failures," << r.tracking_failures << "\n";
    f << "ate_rmse_m," << r.ate_rmse << "\n";
    f << "ate_std_m," << r.ate_std << "\n";
    f << "dyn_precision," << r.dyn_precision << "\n";
    f << "dyn_recall," << r.dyn_recall << "\n";
    f << "false_dynamic," << r.false_dynamic << "\n";
    f << "psnr_db," << r.psnr_db << "\n";
    f << "render_ssim," << r.render_ssim << "\n";
    f << "deleted_gaussians," << r.deleted_gaussians << "\n";
    f << "recovered_gaussians," << r.recovered_gaussians << "\n";
    f << "map_size," << r.map_size << "\n";
}

}  // namespace garad

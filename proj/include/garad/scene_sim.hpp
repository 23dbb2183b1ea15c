#pragma once

#include "garad/config.hpp"
#include "garad/splat_render.hpp"
#include "garad/tum_io.hpp"

#include <random>

namespace garad {

/// Synthetic dynamic-scene description. Defaults finish an end-to-end run in
/// minutes at desk scale.
struct SceneSpec {
    int static_count = 2000;
    int object_count = 2;
    int object_gaussians = 150;
    double object_speed = 0.05;      // meters per frame
    double object_sin_amp = 0.0;     // optional sinusoidal motion component
    double object_sin_freq = 0.2;    // radians per frame
    std::string trajectory = "orbit";  // orbit | lissajous
    double orbit_radius = 2.0;
    double orbit_step_deg = 0.8;     // per frame
    int frames = 30;
    double fps = 30.0;
    int width = 160;
    int height = 120;
    double pixel_noise = 0.5;        // sigma, pixels
    double outlier_fraction = 0.05;
    double dynamic_drop = 0.3;       // chance a dynamic track is dropped per frame (front-end culling)
    int max_tracks = 400;
    std::uint64_t seed = 1;

    Camera camera() const {
        Camera c;
        c.fx = c.fy = 0.75 * width;
        c.cx = width / 2.0;
        c.cy = height / 2.0;
        c.width = width;
        c.height = height;
        return c;
    }

    static SceneSpec from_config(const Config& cfg) {
        cfg.validate_section("scene", {"static_count", "object_count", "object_gaussians",
                                       "object_speed", "object_sin_amp", "object_sin_freq",
                                       "trajectory", "orbit_radius", "orbit_step_deg", "frames",
                                       "fps", "width", "height", "pixel_noise", "outlier_fraction",
                                       "dynamic_drop", "max_tracks", "seed"});
        SceneSpec s;
        s.static_count = cfg.get_int("scene.static_count", s.static_count);
        s.object_count = cfg.get_int("scene.object_count", s.object_count);
        s.object_gaussians = cfg.get_int("scene.object_gaussians", s.object_gaussians);
        s.object_speed = cfg.get_double("scene.object_speed", s.object_speed);
        s.object_sin_amp = cfg.get_double("scene.object_sin_amp", s.object_sin_amp);
        s.object_sin_freq = cfg.get_double("scene.object_sin_freq", s.object_sin_freq);
        s.trajectory = cfg.get_string("scene.trajectory", s.trajectory);
        s.orbit_radius = cfg.get_double("scene.orbit_radius", s.orbit_radius);
        s.orbit_step_deg = cfg.get_double("scene.orbit_step_deg", s.orbit_step_deg);
        s.frames = cfg.get_int("scene.frames", s.frames);
        s.fps = cfg.get_double("scene.fps", s.fps);
        s.width = cfg.get_int("scene.width", s.width);
        s.height = cfg.get_int("scene.height", s.height);
        s.pixel_noise = cfg.get_double("scene.pixel_noise", s.pixel_noise);
        s.outlier_fraction = cfg.get_double("scene.outlier_fraction", s.outlier_fraction);
        s.dynamic_drop = cfg.get_double("scene.dynamic_drop", s.dynamic_drop);
        s.max_tracks = cfg.get_int("scene.max_tracks", s.max_tracks);
        s.seed = static_cast<std::uint64_t>(cfg.get_double("scene.seed", static_cast<double>(s.seed)));
        if (s.static_count < 0 || s.object_count < 0 || s.pixel_noise < 0.0 ||
            s.outlier_fraction < 0.0 || s.outlier_fraction >= 1.0)
            throw ConfigError("scene spec out of range");
        return s;
    }
};

struct SceneObject {
    Vec3 velocity = Vec3::Zero();  // meters per frame
    Vec3 sin_dir = Vec3::Zero();
    double sin_amp = 0.0;
    double sin_freq = 0.0;
};

/// Generated scene: Gaussians carry their TRUE labels; object members move
/// rigidly with their cluster.
struct SimulatedScene {
    SceneSpec spec;
    std::vector<TaggedGaussian> gaussians;
    std::vector<int> object_of;  // -1 for static
    std::vector<SceneObject> objects;

    Vec3 position_at(size_t i, int frame) const {
        const int obj = object_of[i];
        if (obj < 0) return gaussians[i].position;
        const auto& o = objects[static_cast<size_t>(obj)];
        return gaussians[i].position + o.velocity * frame +
               o.sin_amp * std::sin(o.sin_freq * frame) * o.sin_dir;
    }

    /// Scene snapshot with dynamic clusters advanced to the given frame.
    std::vector<TaggedGaussian> at_frame(int frame) const {
        std::vector<TaggedGaussian> out = gaussians;
        for (size_t i = 0; i < out.size(); ++i) out[i].position = position_at(i, frame);
        return out;
    }

    std::vector<TaggedGaussian> static_only() const {
        std::vector<TaggedGaussian> out;
        for (size_t i = 0; i < gaussians.size(); ++i)
            if (object_of[i] < 0) out.push_back(gaussians[i]);
        return out;
    }

    std::map<std::int64_t, int> true_labels() const {
        std::map<std::int64_t, int> out;
        for (size_t i = 0; i < gaussians.size(); ++i) out[gaussians[i].id] = object_of[i] >= 0 ? 1 : 0;
        return out;
    }
};

namespace detail {

// room half extents; static Gaussians live on the inner wall surfaces
constexpr double kRoomX = 3.2, kRoomY = 2.0, kRoomZ = 3.2;

inline Vec3 wall_color(const Vec3& p) {
    return {0.5 + 0.4 * std::sin(1.7 * p.x() + 0.9 * p.y() + 0.4),
            0.5 + 0.4 * std::sin(1.3 * p.z() + 1.1 * p.y() + 2.1),
            0.5 + 0.4 * std::sin(0.9 * p.x() + 1.5 * p.z() + 4.0)};
}

inline CameraPose look_at(const Vec3& center, const Vec3& target, double timestamp) {
    const Vec3 fwd = (target - center).normalized();
    Vec3 up(0.0, 1.0, 0.0);
    if (std::abs(fwd.dot(up)) > 0.99) up = Vec3(1.0, 0.0, 0.0);
    const Vec3 xc = fwd.cross(up).normalized();   // x right
    const Vec3 yc = fwd.cross(xc).normalized();   // y down (CV convention)
    Mat3 r_wc;
    r_wc.col(0) = xc;
    r_wc.col(1) = yc;
    r_wc.col(2) = fwd;
    CameraPose pose;
    pose.rotation = Quat(r_wc.transpose());
    pose.translation = -(pose.rotation * center);
    pose.timestamp = timestamp;
    return pose;
}

}  // namespace detail

/// Deterministic scene generation: textured static Gaussians on the walls of
/// a room-sized box plus rigid dynamic clusters with assigned motions.
inline SimulatedScene generate_scene(const SceneSpec& spec) {
    SimulatedScene scene;
    scene.spec = spec;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };
    std::int64_t next_id = 0;

    // walls, weighted by area: +-x, +-y, +-z
    using detail::kRoomX;
    using detail::kRoomY;
    using detail::kRoomZ;
    const double ax = kRoomY * kRoomZ, ay = kRoomX * kRoomZ, az = kRoomX * kRoomY;
    const double total_area = 2.0 * (ax + ay + az);
    for (int i = 0; i < spec.static_count; ++i) {
        const double pick = uniform(0.0, total_area);
        Vec3 p;
        if (pick < 2 * ax) {
            p = {pick < ax ? kRoomX : -kRoomX, uniform(-kRoomY, kRoomY), uniform(-kRoomZ, kRoomZ)};
        } else if (pick < 2 * ax + 2 * ay) {
            p = {uniform(-kRoomX, kRoomX), pick < 2 * ax + ay ? kRoomY : -kRoomY, uniform(-kRoomZ, kRoomZ)};
        } else {
            p = {uniform(-kRoomX, kRoomX), uniform(-kRoomY, kRoomY),
                 pick < 2 * (ax + ay) + az ? kRoomZ : -kRoomZ};
        }
        TaggedGaussian g;
        g.id = next_id++;
        g.position = p;
        g.scale = Vec3(uniform(0.05, 0.12), uniform(0.05, 0.12), uniform(0.05, 0.12));
        g.opacity = uniform(0.7, 0.95);
        g.color = detail::wall_color(p) + Vec3(uniform(-0.05, 0.05), uniform(-0.05, 0.05), uniform(-0.05, 0.05));
        g.color = g.color.cwiseMax(0.02).cwiseMin(0.98);
        g.label = GaussianLabel::kStatic;
        scene.gaussians.push_back(g);
        scene.object_of.push_back(-1);
    }

    for (int obj = 0; obj < spec.object_count; ++obj) {
        const double angle = uniform(0.0, 2.0 * M_PI);
        const Vec3 center(1.0 * std::cos(angle), uniform(-0.5, 0.5), 1.0 * std::sin(angle));
        SceneObject motion;
        const double dir = uniform(0.0, 2.0 * M_PI);
        motion.velocity = spec.object_speed * Vec3(std::cos(dir), uniform(-0.2, 0.2), std::sin(dir));
        motion.sin_amp = spec.object_sin_amp;
        motion.sin_freq = spec.object_sin_freq;
        motion.sin_dir = Vec3(0.0, 1.0, 0.0);
        scene.objects.push_back(motion);
        const Vec3 base_color(0.25 + 0.5 * ((obj * 2654435761u) % 97) / 96.0,
                              0.25 + 0.5 * ((obj * 40503u + 17) % 89) / 88.0,
                              0.25 + 0.5 * ((obj * 9176u + 5) % 83) / 82.0);
        for (int i = 0; i < spec.object_gaussians; ++i) {
            Vec3 offset;
            do {
                offset = Vec3(uniform(-1.0, 1.0), uniform(-1.0, 1.0), uniform(-1.0, 1.0));
            } while (offset.norm() > 1.0);
            TaggedGaussian g;
            g.id = next_id++;
            g.position = center + 0.15 * offset;
            g.scale = Vec3(uniform(0.02, 0.05), uniform(0.02, 0.05), uniform(0.02, 0.05));
            g.opacity = uniform(0.75, 0.95);
            g.color = base_color + Vec3(uniform(-0.08, 0.08), uniform(-0.08, 0.08), uniform(-0.08, 0.08));
            g.color = g.color.cwiseMax(0.02).cwiseMin(0.98);
            g.label = GaussianLabel::kDynamic;
            scene.gaussians.push_back(g);
            scene.object_of.push_back(obj);
        }
    }
    return scene;
}

/// True camera path, world-to-camera poses (one per frame).
inline std::vector<CameraPose> make_trajectory(const SceneSpec& spec) {
    std::vector<CameraPose> poses;
    poses.reserve(static_cast<size_t>(spec.frames));
    for (int t = 0; t < spec.frames; ++t) {
        const double stamp = t / spec.fps;
        if (spec.trajectory == "lissajous") {
            const double s = 0.02 * t;
            const Vec3 c(1.6 * std::sin(2.0 * s + 0.3), 0.3 * std::sin(3.0 * s),
                         1.6 * std::sin(1.0 * s + 1.2));
            poses.push_back(detail::look_at(c, Vec3::Zero(), stamp));
        } else if (spec.trajectory == "orbit") {
            const double theta = spec.orbit_step_deg * M_PI / 180.0 * t;
            const Vec3 c(spec.orbit_radius * std::sin(theta), 0.15 * std::sin(2.0 * theta),
                         spec.orbit_radius * std::cos(theta));
            poses.push_back(detail::look_at(c, Vec3::Zero(), stamp));
        } else {
            throw ConfigError("unknown trajectory type '" + spec.trajectory + "'");
        }
    }
    return poses;
}

struct SimulatedFrame {
    RenderedImage render;
    Image gray;
};

/// Composites the full scene (static plus advanced dynamic clusters) per frame.
inline std::vector<SimulatedFrame> render_frames(const SimulatedScene& scene,
                                                 const std::vector<CameraPose>& poses,
                                                 const RenderOptions& ropts = {}) {
    const Camera cam = scene.spec.camera();
    std::vector<SimulatedFrame> out;
    out.reserve(poses.size());
    for (size_t t = 0; t < poses.size(); ++t) {
        SimulatedFrame f;
        f.render = composite(scene.at_frame(static_cast<int>(t)), poses[t], cam, ropts);
        f.gray = luma(f.render.rgb);
        out.push_back(std::move(f));
    }
    return out;
}

/// Projects a stratified subset of Gaussians per frame, with pixel noise and
/// an outlier fraction; dynamic observations follow the true moved positions
/// and are dropped with probability `dynamic_drop` (front-end attrition).
inline std::vector<FrameObservations> emit_feature_tracks(const SimulatedScene& scene,
                                                          const std::vector<CameraPose>& poses) {
    const SceneSpec& spec = scene.spec;
    const Camera cam = spec.camera();
    std::mt19937_64 rng(spec.seed + 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double margin = 9.0;
    const int cells_x = 10, cells_y = 8;
    std::vector<FrameObservations> out;
    out.reserve(poses.size());

    for (size_t t = 0; t < poses.size(); ++t) {
        FrameObservations obs;
        obs.frame_id = static_cast<int>(t);
        obs.timestamp = t / spec.fps;

        std::vector<std::vector<FrameObservations::Item>> cells(
            static_cast<size_t>(cells_x) * cells_y);
        for (size_t i = 0; i < scene.gaussians.size(); ++i) {
            const bool dynamic = scene.object_of[i] >= 0;
            if (dynamic && uni(rng) < spec.dynamic_drop) continue;
            const Vec3 pw = scene.position_at(i, static_cast<int>(t));
            const Vec3 pc = poses[t].transform(pw);
            if (pc.z() < 0.3) continue;
            const Vec2 px = project_camera_point(cam, pc);
            if (px.x() < margin || px.y() < margin || px.x() > cam.width - 1 - margin ||
                px.y() > cam.height - 1 - margin)
                continue;
            const int cx = std::min(cells_x - 1, static_cast<int>(px.x() / cam.width * cells_x));
            const int cy = std::min(cells_y - 1, static_cast<int>(px.y() / cam.height * cells_y));
            cells[static_cast<size_t>(cy) * cells_x + cx].push_back(
                {scene.gaussians[i].id, px, pc.z(), true});
        }

        // round-robin over cells for spatial stratification
        size_t remaining = 0;
        for (const auto& c : cells) remaining += c.size();
        std::vector<size_t> cursor(cells.size(), 0);
        while (static_cast<int>(obs.items.size()) < spec.max_tracks && remaining > 0) {
            for (size_t c = 0; c < cells.size() && static_cast<int>(obs.items.size()) < spec.max_tracks;
                 ++c) {
                if (cursor[c] >= cells[c].size()) continue;
                obs.items.push_back(cells[c][cursor[c]++]);
                --remaining;
            }
        }

        for (auto& item : obs.items) {
            if (uni(rng) < spec.outlier_fraction) {
                item.pixel = Vec2(uni(rng) * (cam.width - 1), uni(rng) * (cam.height - 1));
            } else if (spec.pixel_noise > 0.0) {
                item.pixel += spec.pixel_noise * Vec2(gauss(rng), gauss(rng));
            }
        }
        out.push_back(std::move(obs));
    }
    return out;
}

/// Writes the full TUM-layout sequence directory: rgb/, depth/, clean/ image
/// dirs with their list files, groundtruth.txt, labels.txt, tracks.txt, and
/// camera.txt. Depth images are 16-bit at 5000 units per meter.
inline void write_tum_sequence(const SimulatedScene& scene, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const SceneSpec& spec = scene.spec;
    const Camera cam = spec.camera();
    fs::create_directories(dir / "rgb");
    fs::create_directories(dir / "depth");
    fs::create_directories(dir / "clean");

    const auto poses = make_trajectory(spec);
    const auto frames = render_frames(scene, poses);
    const auto tracks = emit_feature_tracks(scene, poses);
    const auto statics = scene.static_only();

    std::ofstream rgb_list(dir / "rgb.txt"), depth_list(dir / "depth.txt"), clean_list(dir / "clean.txt");
    rgb_list << "# timestamp filename\n";
    depth_list << "# timestamp filename\n";
    clean_list << "# timestamp filename\n";
    rgb_list << std::fixed << std::setprecision(6);
    depth_list << std::fixed << std::setprecision(6);
    clean_list << std::fixed << std::setprecision(6);

    Trajectory gt;
    for (size_t t = 0; t < poses.size(); ++t) {
        char name[64];
        std::snprintf(name, sizeof(name), "%06zu", t);
        const std::string rgb_name = std::string("rgb/") + name + ".ppm";
        const std::string depth_name = std::string("depth/") + name + ".pgm";
        const std::string clean_name = std::string("clean/") + name + ".ppm";
        write_ppm(frames[t].render.rgb, dir / rgb_name);
        write_pgm16(frames[t].render.depth, dir / depth_name, kTumDepthScale);
        write_ppm(composite(statics, poses[t], cam).rgb, dir / clean_name);
        const double stamp = t / spec.fps;
        rgb_list << stamp << " " << rgb_name << "\n";
        depth_list << stamp << " " << depth_name << "\n";
        clean_list << stamp << " " << clean_name << "\n";

        CameraPose wc = poses[t].inverse();  // groundtruth.txt is camera-to-world
        wc.timestamp = stamp;
        gt.push(wc);
    }
    write_trajectory(gt, dir / "groundtruth.txt");
    write_labels(scene.true_labels(), dir / "labels.txt");
    write_tracks(tracks, dir / "tracks.txt");
    write_camera(cam, dir / "camera.txt");
}

}  // namespace garad

#pragma once

#include "garad/gaussian_map.hpp"
#include "garad/image.hpp"
#include "garad/trajectory.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

namespace garad {

constexpr double kTumDepthScale = 5000.0;  // units per meter, 16-bit depth images

struct TimedFile {
    double timestamp = 0.0;
    std::string filename;
};

/// Parses a TUM-style list file ("timestamp filename"), skipping '#' comments.
/// Errors name the offending line.
inline std::vector<TimedFile> read_image_list(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    std::vector<TimedFile> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        TimedFile tf;
        if (!(ss >> tf.timestamp >> tf.filename))
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed entry '" + line + "'");
        out.push_back(tf);
    }
    return out;
}

/// TUM trajectory file: "timestamp tx ty tz qx qy qz qw", camera-to-world.
inline Trajectory read_trajectory(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    Trajectory traj;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double t, tx, ty, tz, qx, qy, qz, qw;
        if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed pose '" + line + "'");
        CameraPose p;
        p.timestamp = t;
        p.translation = {tx, ty, tz};
        p.rotation = Quat(qw, qx, qy, qz).normalized();
        traj.push(p);
    }
    return traj;
}

inline void write_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << std::fixed << std::setprecision(6);
    for (const auto& p : traj.poses) {
        f << p.timestamp << " " << p.translation.x() << " " << p.translation.y() << " "
          << p.translation.z() << " " << p.rotation.x() << " " << p.rotation.y() << " "
          << p.rotation.z() << " " << p.rotation.w() << "\n";
    }
    if (!f) throw DataError("write failed for " + path.string());
}

/// Feature tracks, one observation per line:
/// "frame_id timestamp gaussian_id u v depth".
inline void write_tracks(const std::vector<FrameObservations>& tracks,
                         const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << "# frame_id timestamp gaussian_id u v depth\n" << std::setprecision(10);
    for (const auto& frame : tracks)
        for (const auto& item : frame.items) {
            if (!item.valid) continue;
            f << frame.frame_id << " " << frame.timestamp << " " << item.gaussian_id << " "
              << item.pixel.x() << " " << item.pixel.y() << " " << item.depth << "\n";
        }
    if (!f) throw DataError("write failed for " + path.string());
}

inline std::vector<FrameObservations> read_tracks(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    std::map<int, FrameObservations> by_frame;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        int frame_id;
        double timestamp, u, v, depth;
        std::int64_t gid;
        if (!(ss >> frame_id >> timestamp >> gid >> u >> v >> depth))
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed track '" + line + "'");
        auto& frame = by_frame[frame_id];
        frame.frame_id = frame_id;
        frame.timestamp = timestamp;
        frame.items.push_back({gid, Vec2(u, v), depth, true});
    }
    std::vector<FrameObservations> out;
    out.reserve(by_frame.size());
    for (auto& [id, frame] : by_frame) out.push_back(std::move(frame));
    return out;
}

inline void write_labels(const std::map<std::int64_t, int>& labels, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << "# gaussian_id true_label\n";
    for (const auto& [id, label] : labels) f << id << " " << label << "\n";
}

inline std::map<std::int64_t, int> read_labels(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    std::map<std::int64_t, int> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::int64_t id;
        int label;
        if (!(ss >> id >> label))
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed label '" + line + "'");
        out[id] = label;
    }
    return out;
}

inline void write_camera(const Camera& cam, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << "# fx fy cx cy width height\n" << std::setprecision(10) << cam.fx << " " << cam.fy << " "
      << cam.cx << " " << cam.cy << " " << cam.width << " " << cam.height << "\n";
}

inline Camera read_camera(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Camera cam;
        if (!(ss >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.width >> cam.height))
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed intrinsics");
        return cam;
    }
    throw DataError(path.string() + ": no intrinsics entry");
}

struct SequenceFrame {
    double timestamp = 0.0;
    std::filesystem::path rgb_path;
    std::filesystem::path depth_path;
};

/// An on-disk RGB-D sequence in TUM layout, plus the simulator's extras
/// (feature tracks, true labels, intrinsics, clean static renders).
struct TumSequence {
    std::filesystem::path root;
    std::vector<SequenceFrame> frames;
    std::optional<Camera> camera;
    std::optional<Trajectory> ground_truth;
    std::vector<FrameObservations> tracks;
    std::map<std::int64_t, int> true_labels;
    std::vector<std::filesystem::path> clean_renders;  // aligned with frames when present

    Image load_rgb(size_t i) const { return read_ppm(frames[i].rgb_path); }
    Image load_depth(size_t i, double scale = kTumDepthScale) const {
        return read_pgm16(frames[i].depth_path, scale);
    }
};

/// Loads a sequence directory: associates rgb/depth lists by nearest
/// timestamp (within `max_dt`) and picks up whatever side files exist.
inline TumSequence load_tum_sequence(const std::filesystem::path& root, double max_dt = 0.02) {
    TumSequence seq;
    seq.root = root;
    const auto rgb_list = read_image_list(root / "rgb.txt");
    const auto depth_list = read_image_list(root / "depth.txt");
    if (rgb_list.empty()) throw DataError(root.string() + ": rgb.txt lists no frames");

    size_t j = 0;
    for (const auto& r : rgb_list) {
        while (j + 1 < depth_list.size() &&
               std::abs(depth_list[j + 1].timestamp - r.timestamp) <=
                   std::abs(depth_list[j].timestamp - r.timestamp))
            ++j;
        if (j < depth_list.size() && std::abs(depth_list[j].timestamp - r.timestamp) <= max_dt)
            seq.frames.push_back({r.timestamp, root / r.filename, root / depth_list[j].filename});
    }
    if (seq.frames.empty()) throw DataError(root.string() + ": no rgb/depth pairs within association window");

    if (std::filesystem::exists(root / "camera.txt")) seq.camera = read_camera(root / "camera.txt");
    if (std::filesystem::exists(root / "groundtruth.txt"))
        seq.ground_truth = read_trajectory(root / "groundtruth.txt");
    if (std::filesystem::exists(root / "tracks.txt")) seq.tracks = read_tracks(root / "tracks.txt");
    if (std::filesystem::exists(root / "labels.txt")) seq.true_labels = read_labels(root / "labels.txt");
    if (std::filesystem::exists(root / "clean.txt")) {
        for (const auto& tf : read_image_list(root / "clean.txt"))
            seq.clean_renders.push_back(root / tf.filename);
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Gaussian map dump
// ---------------------------------------------------------------------------

/// Plain-text map dump:
/// "id label px py pz qw qx qy qz sx sy sz opacity r g b", with the camera in
/// a header comment so `render` can reproject without extra inputs.
inline void write_map_dump(const std::vector<TaggedGaussian>& gaussians, const Camera& cam,
                           const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << "# garad-map 1\n";
    f << "# camera " << std::setprecision(10) << cam.fx << " " << cam.fy << " " << cam.cx << " "
      << cam.cy << " " << cam.width << " " << cam.height << "\n";
    f << "# id label px py pz qw qx qy qz sx sy sz opacity r g b\n";
    f << std::setprecision(10);
    for (const auto& g : gaussians) {
        f << g.id << " " << (g.dynamic() ? 1 : 0) << " " << g.position.x() << " " << g.position.y()
          << " " << g.position.z() << " " << g.rotation.w() << " " << g.rotation.x() << " "
          << g.rotation.y() << " " << g.rotation.z() << " " << g.scale.x() << " " << g.scale.y()
          << " " << g.scale.z() << " " << g.opacity << " " << g.color.x() << " " << g.color.y()
          << " " << g.color.z() << "\n";
    }
    if (!f) throw DataError("write failed for " + path.string());
}

struct MapDump {
    std::vector<TaggedGaussian> gaussians;
    std::optional<Camera> camera;
};

inline MapDump read_map_dump(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    MapDump dump;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ss(line.substr(1));
            std::string tag;
            ss >> tag;
            if (tag == "camera") {
                Camera cam;
                if (ss >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.width >> cam.height)
                    dump.camera = cam;
            }
            continue;
        }
        std::istringstream ss(line);
        TaggedGaussian g;
        int label;
        double qw, qx, qy, qz;
        if (!(ss >> g.id >> label >> g.position.x() >> g.position.y() >> g.position.z() >> qw >> qx >>
              qy >> qz >> g.scale.x() >> g.scale.y() >> g.scale.z() >> g.opacity >> g.color.x() >>
              g.color.y() >> g.color.z()))
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed gaussian");
        g.rotation = Quat(qw, qx, qy, qz).normalized();
        g.label = label == 1 ? GaussianLabel::kDynamic : GaussianLabel::kStatic;
        dump.gaussians.push_back(g);
    }
    return dump;
}

}  // namespace garad

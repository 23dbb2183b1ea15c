// Command-line front end: scene simulation, pipeline runs, trajectory
// evaluation, map rendering, and ablations.

#include <CLI11.hpp>

#include "garad/pipeline.hpp"

#include <iostream>

namespace {

using namespace garad;

int cmd_simulate(const std::string& spec_path, const std::string& out_dir) {
    Config cfg = Config::load(spec_path);
    const SceneSpec spec = SceneSpec::from_config(cfg);
    const SimulatedScene scene = generate_scene(spec);
    write_tum_sequence(scene, out_dir);
    std::cout << "wrote " << spec.frames << " frames, " << scene.gaussians.size()
              << " gaussians to " << out_dir << "\n";
    return 0;
}

int cmd_run(const std::string& seq_dir, const std::string& config_path, const std::string& out_dir,
            const std::vector<std::string>& disable) {
    Config cfg = config_path.empty() ? Config() : Config::load(config_path);
    PipelineConfig pc = PipelineConfig::from_config(cfg);
    for (const auto& d : disable) {
        if (d == "crf") pc.disable_crf = true;
        else if (d == "flow") pc.disable_flow = true;
        else if (d == "penalty") pc.disable_penalty = true;
        else if (d == "mapping") pc.disable_mapping = true;
        else throw ConfigError("unknown --disable target '" + d + "' (crf|flow|penalty|mapping)");
    }

    const TumSequence seq = load_tum_sequence(seq_dir);
    std::filesystem::create_directories(out_dir);
    PipelineResult result = run_pipeline(seq, pc, out_dir);
    result.report.config_echo = cfg.values();

    const std::filesystem::path out(out_dir);
    write_trajectory(result.trajectory, out / "trajectory.txt");
    write_report_text(result.report, out / "report.txt");
    write_report_csv(result.report, out / "report.csv");
    write_map_dump(result.map.snapshot(), *seq.camera, out / "map.txt");

    std::cout << "frames: " << result.report.frames << "\n"
              << "ate_rmse_m: " << result.report.ate_rmse << "\n"
              << "ate_std_m: " << result.report.ate_std << "\n"
              << "dyn_precision: " << result.report.dyn_precision << "\n"
              << "dyn_recall: " << result.report.dyn_recall << "\n"
              << "map_size: " << result.report.map_size << "\n";
    return 0;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path) {
    const Trajectory est = read_trajectory(est_path);
    const Trajectory gt = read_trajectory(gt_path);
    const AteResult ate = evaluate_ate(est, gt);
    std::cout << "ate_rmse_m: " << ate.rmse << "\n"
              << "ate_std_m: " << ate.stddev << "\n"
              << "matched_poses: " << ate.matched << "\n";
    return 0;
}

int cmd_render(const std::string& map_path, const std::string& pose_path, const std::string& out_path) {
    const MapDump dump = read_map_dump(map_path);
    if (!dump.camera) throw DataError("map dump has no camera header");
    const Trajectory poses = read_trajectory(pose_path);
    if (poses.empty()) throw DataError("pose file is empty");
    const CameraPose pose_cw = poses.poses.front().inverse();  // file stores camera-to-world

    std::vector<TaggedGaussian> statics;
    for (const auto& g : dump.gaussians)
        if (!g.dynamic()) statics.push_back(g);
    const RenderedImage img = composite(statics, pose_cw, *dump.camera);
    write_ppm(img.rgb, out_path);
    std::cout << "rendered " << statics.size() << " static gaussians to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GARAD dynamic-scene splatting pipeline"};
    app.require_subcommand(1);

    std::string spec_path, seq_dir, config_path, out_dir, est_path, gt_path;
    std::string map_path, pose_path, out_path;
    std::vector<std::string> disable;

    auto* sim = app.add_subcommand("simulate", "Generate a synthetic RGB-D sequence");
    sim->add_option("spec", spec_path, "Scene spec config file")->required();
    sim->add_option("out", out_dir, "Output sequence directory")->required();

    auto* run = app.add_subcommand("run", "Run the pipeline on a sequence");
    run->add_option("sequence", seq_dir, "Sequence directory (TUM layout)")->required();
    run->add_option("--config", config_path, "Pipeline config file");
    run->add_option("--out", out_dir, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate ATE of a trajectory against ground truth");
    eval->add_option("estimate", est_path, "Estimated trajectory (TUM format)")->required();
    eval->add_option("groundtruth", gt_path, "Ground-truth trajectory (TUM format)")->required();

    auto* render = app.add_subcommand("render", "Render a map dump from a pose");
    render->add_option("map", map_path, "Map dump file")->required();
    render->add_option("pose", pose_path, "Pose file (TUM format, first line used)")->required();
    render->add_option("out", out_path, "Output PPM image")->required();

    auto* ablate = app.add_subcommand("ablate", "Run with pipeline stages disabled");
    ablate->add_option("sequence", seq_dir, "Sequence directory (TUM layout)")->required();
    ablate->add_option("--config", config_path, "Pipeline config file");
    ablate->add_option("--out", out_dir, "Output directory")->required();
    ablate->add_option("--disable", disable, "Stages to disable: crf|flow|penalty|mapping")
        ->required()
        ->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(spec_path, out_dir);
        if (run->parsed()) return cmd_run(seq_dir, config_path, out_dir, {});
        if (eval->parsed()) return cmd_eval(est_path, gt_path);
        if (render->parsed()) return cmd_render(map_path, pose_path, out_path);
        if (ablate->parsed()) return cmd_run(seq_dir, config_path, out_dir, disable);
    } catch (const garad::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const garad::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

#include "polycap/camera_io.hpp"
#include "polycap/pipeline.hpp"
#include "polycap/synth.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using nlohmann::json;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool resume = false;
  std::string output;
  std::string input;
  bool print_config = false;
};

// Flags given on the command line override the config file.
polycap::PipelineConfig pipeline_config(const GlobalFlags& g, const std::function<void(json&)>& overrides) {
  json j = g.config.empty() ? json::object() : polycap::read_json_file(g.config);
  if (!g.input.empty()) j["input"] = g.input;
  if (!g.output.empty()) j["output"] = g.output;
  if (g.seed) j["seed"] = *g.seed;
  if (g.threads) j["threads"] = *g.threads;
  if (g.resume) j["resume"] = true;
  overrides(j);
  return polycap::PipelineConfig::from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polycap: multi-camera human motion capture from 2D keypoints"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--resume", g.resume, "skip stages whose inputs are unchanged");
  app.add_option("--output", g.output, "output directory");
  app.add_option("--input", g.input, "dataset directory");
  app.add_flag("--print-config", g.print_config, "print the effective config and exit");

  std::optional<std::string> reference;
  std::optional<int> hop, window;
  std::optional<double> frame_rate, max_distance_delta;
  auto* sync = app.add_subcommand("sync", "estimate per-camera audio lags");
  sync->add_option("--reference", reference, "reference camera id");
  sync->add_option("--hop", hop, "MFCC hop length in samples");
  sync->add_option("--window", window, "MFCC window in samples");
  sync->add_option("--frame-rate", frame_rate, "video frame rate for the feasibility report");
  sync->add_option("--max-distance-delta", max_distance_delta, "meters, feasibility report");

  auto* calibrate = app.add_subcommand("calibrate", "pairwise poses, scale graph and bundle adjustment");
  auto* triangulate = app.add_subcommand("triangulate", "lift 2D keypoints to 3D skeletons");

  std::optional<std::string> method, prior, depth_dir;
  std::optional<double> zeta;
  auto* scale = app.add_subcommand("scale", "recover metric scale");
  scale->add_option("--method", method, "bone-prior | depth | none");
  scale->add_option("--prior", prior, "shape prior JSON")->check(CLI::ExistingFile);
  scale->add_option("--depth-dir", depth_dir, "directory of <camera>/<frame>.kdm depth maps");
  scale->add_option("--zeta", zeta, "keypoint confidence threshold for depth sampling");

  std::optional<std::string> ground_truth, sequence;
  auto* evaluate = app.add_subcommand("evaluate", "compare against ground truth");
  evaluate->add_option("--ground-truth", ground_truth, "ground-truth directory");
  evaluate->add_option("--sequence", sequence, "sequence name for the CSV row");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset (--config is a scene config)");
  auto* run = app.add_subcommand("run", "run every stage");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      json j = g.config.empty() ? json::object() : polycap::read_json_file(g.config);
      if (g.seed) j["seed"] = *g.seed;
      const auto cfg = polycap::SceneConfig::from_json(j);
      if (g.print_config) {
        std::cout << cfg.to_json().dump(2) << "\n";
        return 0;
      }
      if (g.output.empty()) throw CLI::RequiredError("--output");
      polycap::write_dataset(polycap::generate_scene(cfg), g.output);
      std::cout << "wrote " << g.output << "\n";
      return 0;
    }

    const auto cfg = pipeline_config(g, [&](json& j) {
      if (reference) j["sync"]["reference"] = *reference;
      if (hop) j["sync"]["hop"] = *hop;
      if (window) j["sync"]["window"] = *window;
      if (frame_rate) j["frame_rate"] = *frame_rate;
      if (max_distance_delta) j["sync"]["max_distance_delta"] = *max_distance_delta;
      if (method) j["scale"]["method"] = *method;
      if (prior) j["scale"]["prior"] = *prior;
      if (depth_dir) j["scale"]["depth_dir"] = *depth_dir;
      if (zeta) j["scale"]["zeta"] = *zeta;
      if (ground_truth) j["evaluate"]["ground_truth"] = *ground_truth;
      if (sequence) j["evaluate"]["sequence"] = *sequence;
    });
    if (g.print_config) {
      std::cout << cfg.to_json().dump(2) << "\n";
      return 0;
    }
    if (run->parsed()) {
      const json manifest = polycap::run_pipeline(cfg);
      for (const auto& [name, stage] : manifest["stages"].items()) {
        std::cout << name << ": " << stage.value("status", "") << " (" << stage.value("seconds", 0.0) << " s)\n";
      }
      return 0;
    }
    for (auto* sub : {sync, calibrate, triangulate, scale, evaluate}) {
      if (sub->parsed()) std::cout << polycap::run_stage(sub->get_name(), cfg).string() << "\n";
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

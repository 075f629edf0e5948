#include "fixtures.hpp"

#include "polycap/camera_io.hpp"
#include "polycap/error.hpp"
#include "polycap/evalmetrics.hpp"
#include "polycap/hashing.hpp"
#include "polycap/pipeline.hpp"

#include <doctest.h>

#include <filesystem>

using namespace polycap;
namespace fs = std::filesystem;

namespace {

/// Hashes of every artifact except the manifest, which records wall-clock.
std::map<std::string, std::string> artifact_hashes(const fs::path& out) {
  std::map<std::string, std::string> h;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") h[e.path().filename().string()] = sha256_file(e.path());
  }
  return h;
}

PipelineConfig config_for(const fs::path& input, const fs::path& output) {
  PipelineConfig c;
  c.input = input;
  c.output = output;
  c.seed = 5;
  c.pairwise.budget = 600;
  c.bundle.budget = 1500;
  return c;
}

/// Four cameras, audio and depth, written once per process.
const fs::path& noisy_dataset() {
  static const fs::path dir = [] {
    SceneConfig cfg = fixtures::small_scene(21);
    cfg.n_cameras = 4;
    const fs::path d = fixtures::temp_dir("pipeline_noisy");
    write_dataset(generate_scene(cfg), d);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("noiseless dataset recovers the cameras to solver tolerance") {
  SceneConfig cfg = fixtures::small_scene(20);
  cfg.n_cameras = 4;
  cfg.noise_px = 0.0;
  cfg.occlusion_rate = 0.0;
  cfg.confidence_jitter = 0.0;
  cfg.lag_max = 0.0;
  cfg.audio = false;
  cfg.depth_frames = 0;
  const fs::path data = fixtures::temp_dir("pipeline_clean");
  write_dataset(generate_scene(cfg), data);
  const fs::path out = fixtures::temp_dir("pipeline_clean_out");
  PipelineConfig pc = config_for(data, out);
  pc.bundle.function_tolerance = 1e-16;
  pc.bundle.max_iterations = 200;
  // The scene's lenses carry k3 and tangential terms; exact recovery needs all five free.
  pc.bundle.free_distortion = {true, true, true, true, true};
  const auto manifest = run_pipeline(pc);
  CHECK(manifest["stages"].contains("evaluate"));

  const auto est = read_camera_file(out / "cameras.json").cameras;
  const auto gt = read_camera_file(data / "ground_truth" / "cameras.json").cameras;
  const CameraMetrics m = camera_metrics(est, gt, {1.0}, {1.0});
  CHECK(m.s_te < 1e-4 * cfg.ring_radius);
  CHECK(m.ae < 1e-3);
  CHECK(m.fov < 1e-3);
}

TEST_CASE("missing audio means zero lags and a manifest note") {
  SceneConfig cfg = fixtures::small_scene(22);
  cfg.audio = false;
  cfg.lag_max = 0.0;
  cfg.depth_frames = 0;
  const fs::path data = fixtures::temp_dir("pipeline_noaudio");
  write_dataset(generate_scene(cfg), data);
  const fs::path out = fixtures::temp_dir("pipeline_noaudio_out");
  run_stage("sync", config_for(data, out));
  const auto sync = read_json_file(out / "sync.json");
  CHECK(sync["status"] == "assumed synchronized");
  for (const auto& [id, lag] : sync["lags"].items()) CHECK(lag.get<double>() == 0.0);
  const auto notes = read_json_file(out / "manifest.json")["stages"]["sync"]["notes"];
  REQUIRE(notes.size() == 1);
  CHECK(notes[0].get<std::string>().find("assumed synchronized") != std::string::npos);
}

TEST_CASE("stages need their prerequisites") {
  const fs::path out = fixtures::temp_dir("pipeline_prereq");
  PipelineConfig pc = config_for(noisy_dataset(), out);
  try {
    run_stage("triangulate", pc);
    FAIL("expected MissingPrerequisite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingPrerequisite);
  }
  pc.evaluate.ground_truth = out / "nowhere";
  try {
    run_stage("evaluate", pc);
    FAIL("expected MissingPrerequisite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingPrerequisite);
  }
  CHECK_THROWS_AS(run_stage("reconstruct", pc), Error);
}

TEST_CASE("run_pipeline equals the stages called one by one, and resume skips intact stages") {
  const fs::path a = fixtures::temp_dir("pipeline_full");
  const fs::path b = fixtures::temp_dir("pipeline_staged");
  const PipelineConfig pa = config_for(noisy_dataset(), a);
  const PipelineConfig pb = config_for(noisy_dataset(), b);
  run_pipeline(pa);
  for (const auto& s : pipeline_stages()) run_stage(s, pb);
  const auto ha = artifact_hashes(a);
  CHECK(ha.size() >= 12);
  CHECK(ha == artifact_hashes(b));

  // Triangulating again rewrites the same bytes.
  const std::string skel = ha.at("skeletons_raw.jsonl");
  run_stage("triangulate", pb);
  CHECK(sha256_file(b / "skeletons_raw.jsonl") == skel);

  const auto manifest = read_json_file(a / "manifest.json");
  for (const auto& s : pipeline_stages()) {
    CHECK(manifest["stages"][s]["status"] == "ran");
    CHECK(manifest["stages"][s]["seconds"].get<double>() >= 0.0);
    CHECK(manifest["stages"][s]["outputs"].size() >= 1);
  }
  CHECK(manifest["seed"] == 5);

  fs::remove(a / "scale.json");
  PipelineConfig resume = pa;
  resume.resume = true;
  const auto after = run_pipeline(resume);
  for (const std::string s : {"sync", "calibrate", "triangulate"}) CHECK(after["stages"][s]["status"] == "skipped");
  CHECK(after["stages"]["scale"]["status"] == "ran");
  CHECK(after["stages"]["evaluate"]["status"] == "skipped");
  CHECK(artifact_hashes(a) == ha);
}

TEST_CASE("thread count does not change values") {
  const fs::path a = fixtures::temp_dir("pipeline_t1");
  const fs::path b = fixtures::temp_dir("pipeline_t4");
  PipelineConfig pa = config_for(noisy_dataset(), a);
  PipelineConfig pb = config_for(noisy_dataset(), b);
  pb.threads = 4;
  pa.stages.evaluate = pb.stages.evaluate = false;
  run_pipeline(pa);
  run_pipeline(pb);
  const auto ca = read_camera_file(a / "cameras_metric.json").cameras;
  const auto cb = read_camera_file(b / "cameras_metric.json").cameras;
  REQUIRE(ca.size() == cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i) {
    CHECK((ca[i].pose.translation - cb[i].pose.translation).norm() < 1e-9);
    CHECK(rotation_angle_between(ca[i].pose.rotation, cb[i].pose.rotation) < 1e-9);
    CHECK(std::abs(ca[i].intrinsics.fx - cb[i].intrinsics.fx) < 1e-9);
  }
  const auto sa = read_skeleton_sequence(a / "skeletons.jsonl");
  const auto sb = read_skeleton_sequence(b / "skeletons.jsonl");
  REQUIRE(sa.frames.size() == sb.frames.size());
  for (std::size_t f = 0; f < sa.frames.size(); ++f) {
    for (std::size_t k = 0; k < sa.frames[f].joints.size(); ++k) {
      REQUIRE(sa.frames[f].joints[k].visible == sb.frames[f].joints[k].visible);
      if (sa.frames[f].joints[k].visible) CHECK((sa.frames[f].joints[k].position - sb.frames[f].joints[k].position).norm() < 1e-9);
    }
  }
}

TEST_CASE("depth scaling runs end to end") {
  const fs::path out = fixtures::temp_dir("pipeline_depth");
  PipelineConfig pc = config_for(noisy_dataset(), out);
  pc.scale.method = "depth";
  run_pipeline(pc);
  const auto scale = read_json_file(out / "scale.json");
  CHECK(scale["method"] == "depth");
  const auto metrics = read_json_file(out / "metrics.json");
  // Rigid alignment keeps the estimated scale, so metric scale shows in TE.
  CHECK(metrics["te"].get<double>() < 0.05 * 3.0);
}

TEST_CASE("pipeline configs reject unknown keys and bad values") {
  const PipelineConfig d;
  const auto j = d.to_json();
  CHECK(PipelineConfig::from_json(j).to_json() == j);
  auto bad = j;
  bad["bundle"]["kapa"] = 0.3;
  try {
    PipelineConfig::from_json(bad);
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
    CHECK(std::string(e.what()).find("kapa") != std::string::npos);
  }
  bad = j;
  bad["tau"] = 1.5;
  CHECK_THROWS_AS(PipelineConfig::from_json(bad), Error);
  bad = j;
  bad["scale"]["method"] = "guess";
  CHECK_THROWS_AS(PipelineConfig::from_json(bad), Error);
  // Partial configs fill in defaults.
  const auto partial = PipelineConfig::from_json({{"seed", 9}, {"bundle", {{"kappa", 0.3}}}});
  CHECK(partial.seed == 9);
  CHECK(partial.bundle.kappa == 0.3);
  CHECK(partial.bundle.budget == d.bundle.budget);
}

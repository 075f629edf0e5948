#include "polycap/pipeline.hpp"

#include "polycap/audiosync.hpp"
#include "polycap/camera_io.hpp"
#include "polycap/config_reader.hpp"
#include "polycap/error.hpp"
#include "polycap/evalmetrics.hpp"
#include "polycap/hashing.hpp"
#include "polycap/lift3d.hpp"
#include "polycap/metricscale.hpp"
#include "polycap/parallel.hpp"
#include "polycap/raster_io.hpp"
#include "polycap/scalegraph.hpp"
#include "polycap/shape_prior.hpp"
#include "polycap/wav.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <set>

namespace polycap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::InvalidConfig, "pipeline config: " + what);
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& extension) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == extension) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void require_file(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) {
    fail(ErrorCode::MissingPrerequisite, "missing " + path.string() + " (run stage '" + stage + "' first)");
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

json load_manifest(const fs::path& out) {
  const fs::path p = out / "manifest.json";
  if (fs::exists(p)) return read_json_file(p);
  return json{{"stages", json::object()}, {"notes", json::array()}};
}

std::size_t keypoint_count(const fs::path& input, std::span<const DetectionRecord> records) {
  if (fs::exists(input / "skeleton.json")) return read_skeleton_file(input / "skeleton.json").size();
  if (records.empty()) fail(ErrorCode::InvalidDetections, "no detections in " + input.string());
  return records.front().keypoints.size();
}

struct SyncInfo {
  std::string reference;
  std::map<std::string, double> lags;
};

SyncInfo read_sync(const fs::path& out) {
  require_file(out / "sync.json", "sync");
  const json j = read_json_file(out / "sync.json");
  return {j.at("reference").get<std::string>(), j.at("lags").get<std::map<std::string, double>>()};
}

DetectionTimeline load_timeline(const PipelineConfig& cfg, const std::vector<DetectionRecord>& records) {
  const SyncInfo sync = read_sync(cfg.output);
  return build_timeline(records, keypoint_count(cfg.input, records), sync.lags,
                        infer_frame_rates(records, cfg.frame_rate), sync.reference);
}

/// Cameras ordered like the timeline.
std::vector<CameraModel> order_cameras(const DetectionTimeline& timeline, const CameraSet& set, const fs::path& src) {
  std::vector<CameraModel> out;
  for (const auto& id : timeline.camera_ids()) {
    const auto it = std::find_if(set.cameras.begin(), set.cameras.end(), [&](const CameraModel& c) { return c.id == id; });
    if (it == set.cameras.end()) fail(ErrorCode::IdMismatch, src.string() + " lacks camera " + id);
    out.push_back(*it);
  }
  return out;
}

std::vector<fs::path> keypoint_files(const fs::path& input) { return sorted_files(input / "keypoints", ".jsonl"); }

std::vector<fs::path> depth_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> cams;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) cams.push_back(e.path());
  }
  std::sort(cams.begin(), cams.end());
  for (const auto& c : cams) {
    for (auto& f : sorted_files(c, ".kdm")) out.push_back(std::move(f));
  }
  return out;
}

struct StageDef {
  std::string name;
  json settings;
  std::vector<fs::path> inputs;
  std::vector<std::string> outputs;  // relative to the output directory
  std::function<json()> body;        // returns stage notes
};

std::string stage_hint(const std::string& stage) {
  if (stage == "sync") return "check audio/<camera>.wav files share a sample rate and overlap in content";
  if (stage == "calibrate") return "lower tau or raise the pairwise budget; every camera needs shared detections";
  if (stage == "triangulate") return "run calibrate first and check cameras.json";
  if (stage == "scale") return "check the shape prior or depth directory, or use method 'none'";
  return "provide a ground_truth directory with cameras.json";
}

std::string relative_name(const fs::path& p, const PipelineConfig& cfg) {
  std::error_code ec;
  for (const fs::path& base : {cfg.output, cfg.input}) {
    const fs::path rel = fs::relative(p, base, ec);
    if (!ec && !rel.empty() && *rel.begin() != "..") return rel.generic_string();
  }
  return p.generic_string();
}

fs::path execute(const StageDef& stage, const PipelineConfig& cfg) {
  fs::create_directories(cfg.output);
  std::string digest_input = stage.name + "\n" + stage.settings.dump() + "\n";
  for (const auto& in : stage.inputs) {
    require_file(in, stage.name);
    digest_input += relative_name(in, cfg) + " " + sha256_file(in) + "\n";
  }
  const std::string inputs_hash = sha256_hex(digest_input);

  json manifest = load_manifest(cfg.output);
  if (cfg.resume && manifest["stages"].contains(stage.name)) {
    const json& prev = manifest["stages"][stage.name];
    bool intact = prev.value("inputs_hash", "") == inputs_hash;
    for (const auto& name : stage.outputs) {
      const fs::path p = cfg.output / name;
      intact = intact && fs::exists(p) && prev["outputs"].contains(name) &&
               prev["outputs"][name].get<std::string>() == sha256_file(p);
    }
    if (intact) {
      manifest["stages"][stage.name]["status"] = "skipped";
      write_json_file(cfg.output / "manifest.json", manifest);
      return cfg.output / stage.outputs.front();
    }
  }

  const auto start = std::chrono::steady_clock::now();
  json notes;
  try {
    notes = stage.body();
  } catch (const Error& e) {
    throw Error(e.code(), "stage '" + stage.name + "' failed: " + e.what() + " (hint: " + stage_hint(stage.name) + ")");
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json outputs = json::object();
  for (const auto& name : stage.outputs) outputs[name] = sha256_file(cfg.output / name);
  manifest = load_manifest(cfg.output);
  manifest["version"] = kVersion;
  manifest["config"] = cfg.to_json();
  manifest["seed"] = cfg.seed;
  manifest["stages"][stage.name] = {{"status", "ran"},
                                    {"inputs_hash", inputs_hash},
                                    {"outputs", outputs},
                                    {"seconds", seconds},
                                    {"notes", notes.is_null() ? json::array() : notes}};
  write_json_file(cfg.output / "manifest.json", manifest);
  return cfg.output / stage.outputs.front();
}

// ---- stages -------------------------------------------------------------

StageDef sync_stage(const PipelineConfig& cfg) {
  StageDef s;
  s.name = "sync";
  s.settings = cfg.to_json()["sync"];
  s.settings["frame_rate"] = cfg.frame_rate;
  s.inputs = keypoint_files(cfg.input);
  for (auto& f : sorted_files(cfg.input / "audio", ".wav")) s.inputs.push_back(std::move(f));
  s.outputs = {"sync.json"};
  s.body = [cfg]() -> json {
    const auto records = load_detections(cfg.input);
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.camera_id);
    const auto rates = infer_frame_rates(records, cfg.frame_rate);
    const auto audio_files = sorted_files(cfg.input / "audio", ".wav");
    json out;
    json notes = json::array();
    std::string reference = cfg.sync.reference.empty() ? *ids.begin() : cfg.sync.reference;
    if (!ids.count(reference)) fail(ErrorCode::MissingPrerequisite, "reference camera " + reference + " has no keypoints");
    if (audio_files.empty()) {
      std::map<std::string, double> lags;
      for (const auto& id : ids) lags[id] = 0.0;
      out = {{"reference", reference}, {"lags", lags}, {"status", "assumed synchronized"}};
      notes.push_back("no audio found: assumed synchronized, all lags zero");
    } else {
      std::map<std::string, AudioTrack> tracks;
      for (const auto& f : audio_files) tracks[f.stem().string()] = read_wav(f);
      for (const auto& id : ids) {
        if (!tracks.count(id)) fail(ErrorCode::MissingPrerequisite, "camera " + id + " has keypoints but no audio");
      }
      const MfccParams params{cfg.sync.window, cfg.sync.hop, cfg.sync.n_mels, cfg.sync.n_coeffs};
      LagSearchOptions opts;
      opts.min_prominence = cfg.sync.min_prominence;
      opts.min_peak_separation = cfg.sync.min_peak_separation;
      const SyncResult res = synchronize(tracks, reference, params, opts);
      double fr = 0.0;
      for (const auto& [id, r] : rates) fr = std::max(fr, r);
      const auto feas = subframe_feasibility(cfg.sync.hop, tracks.at(reference).sample_rate, fr,
                                             cfg.sync.max_distance_delta);
      out = {{"reference", reference},
             {"lags", res.lags},
             {"correlation_peak", res.correlation_peak},
             {"status", "audio"},
             {"feasibility",
              {{"feasible", feas.feasible},
               {"frame_rate", fr},
               {"dt_hop", feas.dt_hop},
               {"dt_distance", feas.dt_distance},
               {"h_max", feas.h_max},
               {"d_max", feas.d_max}}}};
    }
    write_json_file(cfg.output / "sync.json", out);
    return notes;
  };
  return s;
}

StageDef calibrate_stage(const PipelineConfig& cfg) {
  StageDef s;
  s.name = "calibrate";
  const json c = cfg.to_json();
  s.settings = {{"pairwise", c["pairwise"]}, {"bundle", c["bundle"]}, {"tau", cfg.tau},
                {"mu", cfg.mu},             {"seed", cfg.seed},     {"frame_rate", cfg.frame_rate}};
  s.inputs = keypoint_files(cfg.input);
  s.inputs.push_back(cfg.input / "cameras_init.json");
  s.inputs.push_back(cfg.output / "sync.json");
  if (fs::exists(cfg.input / "skeleton.json")) s.inputs.push_back(cfg.input / "skeleton.json");
  s.outputs = {"cameras.json", "pairs.json", "graph.json", "ba_report.json", "ba_points.ply"};
  s.body = [cfg]() -> json {
    const auto records = load_detections(cfg.input);
    const DetectionTimeline tl = load_timeline(cfg, records);
    require_file(cfg.input / "cameras_init.json", "input");
    std::vector<CameraModel> cameras = order_cameras(tl, read_camera_file(cfg.input / "cameras_init.json"),
                                                     cfg.input / "cameras_init.json");
    const std::size_t n = cameras.size();
    const auto ids = tl.camera_ids();

    std::vector<std::pair<std::size_t, std::size_t>> pair_list;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) pair_list.emplace_back(i, j);
    }
    std::vector<std::optional<PairCalibration>> results(pair_list.size());
    std::vector<json> diag(pair_list.size());
    parallel_for(pair_list.size(), cfg.threads, [&](std::size_t p) {
      const auto [i, j] = pair_list[p];
      json d = {{"cameras", {ids[i], ids[j]}}};
      try {
        const auto pool = score_and_filter_pairs(tl, i, j, cfg.tau);
        d["pool"] = pool.size();
        if (pool.size() < cfg.pairwise.min_correspondences) {
          d["status"] = "skipped";
          d["reason"] = "too few correspondences";
        } else {
          const auto sample = sample_correspondences(pool, cfg.pairwise.budget, mix_seed(cfg.seed, 2 * p));
          RansacConfig rc;
          rc.iterations = cfg.pairwise.ransac_iterations;
          rc.inlier_threshold = cfg.pairwise.inlier_threshold;
          rc.min_inlier_ratio = cfg.pairwise.min_inlier_ratio;
          rc.refine_iterations = cfg.pairwise.refine_iterations;
          rc.seed = mix_seed(cfg.seed, 2 * p + 1);
          PairCalibration pc = estimate_relative_pose(sample, cameras[i].intrinsics, cameras[j].intrinsics, rc);
          pc.cam_i = i;
          pc.cam_j = j;
          d["status"] = "ok";
          d["estimate"] = pair_diagnostics(pc, ids);
          results[p] = std::move(pc);
        }
      } catch (const Error& e) {
        d["status"] = "failed";
        d["reason"] = std::string(to_string(e.code())) + ": " + e.what();
      }
      diag[p] = std::move(d);
    });
    write_json_file(cfg.output / "pairs.json", diag);

    CalibrationGraph graph;
    graph.nodes = ids;
    for (auto& r : results) {
      if (r) graph.edges.push_back(*r);
    }
    graph.require_connected();
    ScaleSolution scales = solve_relative_scales(graph, cfg.mu);
    // Global scale is a gauge freedom; unit geometric mean keeps the scene well conditioned.
    double log_mean = 0.0;
    for (double l : scales.lambda) log_mean += std::log(l) / static_cast<double>(scales.lambda.size());
    for (double& l : scales.lambda) l /= std::exp(log_mean);
    const auto mst = extract_mst(graph);
    const auto poses = compose_absolute_extrinsics(graph, mst, scales.lambda, 0);
    write_json_file(cfg.output / "graph.json", graph_dump(graph, scales, mst));
    for (std::size_t c = 0; c < n; ++c) cameras[c].pose = poses[c];

    BaProblem problem = select_ba_points(tl, cameras, cfg.bundle.kappa, cfg.bundle.budget, mix_seed(cfg.seed, 1u << 20),
                                         cfg.bundle.huber_delta);
    BaConfig bc;
    bc.max_iterations = cfg.bundle.max_iterations;
    bc.function_tolerance = cfg.bundle.function_tolerance;
    bc.tie_focal = cfg.bundle.tie_focal;
    for (std::size_t k = 0; k < 5; ++k) bc.free_distortion[k] = cfg.bundle.free_distortion[k];
    bc.retriangulate_focal_change = cfg.bundle.retriangulate_focal_change;
    const BaResult ba = run_bundle_adjustment(std::move(problem), bc);
    write_json_file(cfg.output / "ba_report.json",
                    {{"passes", pass_reports_json(ba.reports)},
                     {"points", ba.problem.points.size()},
                     {"observations", ba.problem.observations.size()}});
    write_camera_file(cfg.output / "cameras.json", CameraSet{"scene", ba.problem.cameras});
    write_ply(cfg.output / "ba_points.ply", ba.problem.points, PlyFormat::BinaryLittleEndian);
    json notes = json::array();
    notes.push_back(std::to_string(graph.edges.size()) + " of " + std::to_string(pair_list.size()) +
                    " camera pairs calibrated");
    return notes;
  };
  return s;
}

StageDef triangulate_stage(const PipelineConfig& cfg) {
  StageDef s;
  s.name = "triangulate";
  s.settings = {{"lambda_c", cfg.lambda_c}, {"frame_rate", cfg.frame_rate}};
  s.inputs = keypoint_files(cfg.input);
  s.inputs.push_back(cfg.output / "sync.json");
  s.inputs.push_back(cfg.output / "cameras.json");
  if (fs::exists(cfg.input / "skeleton.json")) s.inputs.push_back(cfg.input / "skeleton.json");
  s.outputs = {"skeletons_raw.jsonl"};
  s.body = [cfg]() -> json {
    const auto records = load_detections(cfg.input);
    const DetectionTimeline tl = load_timeline(cfg, records);
    const auto cameras = order_cameras(tl, read_camera_file(cfg.output / "cameras.json"), cfg.output / "cameras.json");
    const SkeletonSequence seq = triangulate_sequence(tl, cameras, ConfidenceParams{cfg.lambda_c}, cfg.threads);
    write_skeleton_sequence(cfg.output / "skeletons_raw.jsonl", seq);
    return json::array();
  };
  return s;
}

std::vector<DepthCandidate> depth_candidates(const PipelineConfig& cfg, const DetectionTimeline& tl,
                                             const SkeletonSequence& skel, std::deque<DepthMap>& storage) {
  std::map<std::pair<long, int>, const SkeletonFrame*> by_frame;
  for (const auto& f : skel.frames) by_frame[{f.frame_index, f.person_id}] = &f;
  std::vector<DepthCandidate> out;
  for (const auto& file : depth_files(cfg.depth_path())) {
    const auto cam = tl.camera_index(file.parent_path().filename().string());
    if (!cam) continue;
    long k = 0;
    try {
      k = std::stol(file.stem().string());
    } catch (const std::exception&) {
      continue;
    }
    const auto& frames = tl.cameras[*cam].frames;
    const auto it = std::lower_bound(frames.begin(), frames.end(), k,
                                     [](const FrameDetections& f, long v) { return f.frame_index < v; });
    if (it == frames.end() || it->frame_index != k) continue;
    const auto local = static_cast<std::size_t>(it - frames.begin());
    const auto group = std::find_if(tl.groups.begin(), tl.groups.end(),
                                    [&](const FrameGroup& g) { return g.members[*cam] == local; });
    if (group == tl.groups.end()) continue;
    storage.push_back(read_depth_map(file));
    for (const auto& [person, kps] : it->persons) {
      const auto sf = by_frame.find({group->frame_index, person});
      if (sf == by_frame.end()) continue;
      DepthCandidate c;
      c.camera = *cam;
      c.frame_index = k;
      c.depth = &storage.back();
      for (const auto& j : sf->second->joints) c.joints.push_back(j.visible ? j.position : Vec3::Constant(std::nan("")));
      c.detections = kps;
      out.push_back(std::move(c));
    }
  }
  return out;
}

StageDef scale_stage(const PipelineConfig& cfg) {
  StageDef s;
  s.name = "scale";
  s.settings = cfg.to_json()["scale"];
  s.inputs = {cfg.output / "skeletons_raw.jsonl", cfg.output / "cameras.json", cfg.output / "ba_points.ply"};
  if (cfg.scale.method == "bone-prior") s.inputs.push_back(cfg.prior_path());
  if (cfg.scale.method == "depth") {
    for (auto& f : keypoint_files(cfg.input)) s.inputs.push_back(std::move(f));
    s.inputs.push_back(cfg.output / "sync.json");
    for (auto& f : depth_files(cfg.depth_path())) s.inputs.push_back(std::move(f));
  }
  s.outputs = {"scale.json", "cameras_metric.json", "skeletons.jsonl", "pointcloud.ply"};
  s.body = [cfg]() -> json {
    Scene scene;
    scene.skeletons = read_skeleton_sequence(cfg.output / "skeletons_raw.jsonl");
    scene.cameras = read_camera_file(cfg.output / "cameras.json").cameras;
    scene.points = read_ply(cfg.output / "ba_points.ply");
    ScaleResult result;
    if (cfg.scale.method == "bone-prior") {
      require_file(cfg.prior_path(), "input");
      BonePriorConfig bc{cfg.scale.lambda_bones, cfg.scale.lambda_beta, cfg.scale.delta, cfg.scale.max_iterations};
      result = estimate_scale_bone_prior(scene.skeletons, read_shape_prior(cfg.prior_path()), bc);
    } else if (cfg.scale.method == "depth") {
      const auto records = load_detections(cfg.input);
      const DetectionTimeline tl = load_timeline(cfg, records);
      const auto cameras = order_cameras(tl, CameraSet{"scene", scene.cameras}, cfg.output / "cameras.json");
      std::deque<DepthMap> storage;
      const auto candidates = depth_candidates(cfg, tl, scene.skeletons, storage);
      result = estimate_scale_depth(candidates, cameras, DepthScaleConfig{cfg.scale.zeta, cfg.lambda_c});
    } else {
      result.method = "none";
      result.alpha = 1.0;
    }
    const Scene metric = apply_scale(scene, result.alpha);
    write_json_file(cfg.output / "scale.json", scale_result_json(result));
    write_camera_file(cfg.output / "cameras_metric.json",
                      CameraSet{result.method == "none" ? "scene" : "meters", metric.cameras});
    write_skeleton_sequence(cfg.output / "skeletons.jsonl", metric.skeletons);
    write_ply(cfg.output / "pointcloud.ply", metric.points,
              cfg.scale.binary_ply ? PlyFormat::BinaryLittleEndian : PlyFormat::Ascii);
    return json::array();
  };
  return s;
}

StageDef evaluate_stage(const PipelineConfig& cfg) {
  StageDef s;
  s.name = "evaluate";
  s.settings = cfg.to_json()["evaluate"];
  const fs::path gt = cfg.ground_truth_path();
  s.inputs = {cfg.output / "cameras_metric.json", cfg.output / "skeletons.jsonl", gt / "cameras.json"};
  if (fs::exists(gt / "skeletons.jsonl")) s.inputs.push_back(gt / "skeletons.jsonl");
  s.outputs = {"metrics.json", "metrics.csv"};
  s.body = [cfg, gt]() -> json {
    const auto est = read_camera_file(cfg.output / "cameras_metric.json").cameras;
    const auto truth = read_camera_file(gt / "cameras.json").cameras;
    const CameraMetrics cm = camera_metrics(est, truth, cfg.evaluate.thresholds_deg, cfg.evaluate.thresholds_pct);
    std::optional<PoseMetrics> pm;
    std::optional<PoseMetrics> pm_sim;
    if (fs::exists(gt / "skeletons.jsonl")) {
      const auto est_skel = read_skeleton_sequence(cfg.output / "skeletons.jsonl");
      const auto gt_skel = read_skeleton_sequence(gt / "skeletons.jsonl");
      pm = pose_metrics(est_skel, gt_skel, cm.rigid);
      pm_sim = pose_metrics(est_skel, gt_skel, cm.similarity);
    }
    json j = metrics_json(cm, pm);
    if (pm_sim) j["w_mpjpe_similarity"] = pm_sim->w_mpjpe;
    write_json_file(cfg.output / "metrics.json", j);
    write_text_file(cfg.output / "metrics.csv", metrics_csv(cfg.evaluate.sequence, cm, pm));
    return json::array();
  };
  return s;
}

StageDef make_stage(const std::string& name, const PipelineConfig& cfg) {
  if (name == "sync") return sync_stage(cfg);
  if (name == "calibrate") return calibrate_stage(cfg);
  if (name == "triangulate") return triangulate_stage(cfg);
  if (name == "scale") return scale_stage(cfg);
  if (name == "evaluate") {
    if (!fs::exists(cfg.ground_truth_path() / "cameras.json")) {
      fail(ErrorCode::MissingPrerequisite, "evaluate needs ground truth at " + cfg.ground_truth_path().string());
    }
    return evaluate_stage(cfg);
  }
  fail(ErrorCode::InvalidConfig, "unknown stage " + name);
}

}  // namespace

std::vector<DetectionRecord> load_detections(const fs::path& input) {
  const auto files = keypoint_files(input);
  if (files.empty()) fail(ErrorCode::MissingPrerequisite, "no keypoint files under " + (input / "keypoints").string());
  std::vector<DetectionRecord> out;
  for (const auto& f : files) {
    auto recs = read_keypoint_file(f);
    for (auto& r : recs) {
      if (r.camera_id.empty()) r.camera_id = f.stem().string();
    }
    out.insert(out.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return out;
}

std::map<std::string, double> infer_frame_rates(std::span<const DetectionRecord> records, double fallback) {
  std::map<std::string, std::map<long, double>> stamps;
  std::set<std::string> ids;
  for (const auto& r : records) {
    ids.insert(r.camera_id);
    if (r.timestamp) stamps[r.camera_id][r.frame_index] = *r.timestamp;
  }
  std::map<std::string, double> out;
  for (const auto& id : ids) {
    if (fallback > 0) {
      out[id] = fallback;
      continue;
    }
    const auto it = stamps.find(id);
    if (it == stamps.end() || it->second.size() < 2) {
      fail(ErrorCode::InvalidDetections, "camera " + id + " has no timestamps; set frame_rate in the config");
    }
    const auto& [k0, t0] = *it->second.begin();
    const auto& [k1, t1] = *it->second.rbegin();
    if (!(t1 > t0)) fail(ErrorCode::InvalidDetections, "camera " + id + " timestamps do not increase");
    out[id] = static_cast<double>(k1 - k0) / (t1 - t0);
  }
  return out;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  ConfigReader r(j, "config");
  std::string input = c.input.string(), output = c.output.string();
  r.read("input", input);
  r.read("output", output);
  c.input = input;
  c.output = output;
  r.read("seed", c.seed);
  r.read("threads", c.threads);
  r.read("resume", c.resume);
  r.read("frame_rate", c.frame_rate);
  r.read("tau", c.tau);
  r.read("mu", c.mu);
  r.read("lambda_c", c.lambda_c);
  {
    const json sec = r.section("stages");
    ConfigReader s(sec, "config.stages");
    s.read("sync", c.stages.sync);
    s.read("calibrate", c.stages.calibrate);
    s.read("triangulate", c.stages.triangulate);
    s.read("scale", c.stages.scale);
    s.read("evaluate", c.stages.evaluate);
    s.finish();
  }
  {
    const json sec = r.section("sync");
    ConfigReader s(sec, "config.sync");
    s.read("reference", c.sync.reference);
    s.read("hop", c.sync.hop);
    s.read("window", c.sync.window);
    s.read("n_mels", c.sync.n_mels);
    s.read("n_coeffs", c.sync.n_coeffs);
    s.read("min_prominence", c.sync.min_prominence);
    s.read("min_peak_separation", c.sync.min_peak_separation);
    s.read("max_distance_delta", c.sync.max_distance_delta);
    s.finish();
  }
  {
    const json sec = r.section("pairwise");
    ConfigReader s(sec, "config.pairwise");
    s.read("budget", c.pairwise.budget);
    s.read("min_correspondences", c.pairwise.min_correspondences);
    s.read("ransac_iterations", c.pairwise.ransac_iterations);
    s.read("inlier_threshold", c.pairwise.inlier_threshold);
    s.read("min_inlier_ratio", c.pairwise.min_inlier_ratio);
    s.read("refine_iterations", c.pairwise.refine_iterations);
    s.finish();
  }
  {
    const json sec = r.section("bundle");
    ConfigReader s(sec, "config.bundle");
    s.read("kappa", c.bundle.kappa);
    s.read("budget", c.bundle.budget);
    s.read("huber_delta", c.bundle.huber_delta);
    s.read("max_iterations", c.bundle.max_iterations);
    s.read("function_tolerance", c.bundle.function_tolerance);
    s.read("tie_focal", c.bundle.tie_focal);
    s.read("free_distortion", c.bundle.free_distortion);
    s.read("retriangulate_focal_change", c.bundle.retriangulate_focal_change);
    s.finish();
  }
  {
    const json sec = r.section("scale");
    ConfigReader s(sec, "config.scale");
    std::string prior = c.scale.prior.string(), depth = c.scale.depth_dir.string();
    s.read("method", c.scale.method);
    s.read("prior", prior);
    s.read("depth_dir", depth);
    c.scale.prior = prior;
    c.scale.depth_dir = depth;
    s.read("zeta", c.scale.zeta);
    s.read("lambda_bones", c.scale.lambda_bones);
    s.read("lambda_beta", c.scale.lambda_beta);
    s.read("delta", c.scale.delta);
    s.read("max_iterations", c.scale.max_iterations);
    s.read("binary_ply", c.scale.binary_ply);
    s.finish();
  }
  {
    const json sec = r.section("evaluate");
    ConfigReader s(sec, "config.evaluate");
    std::string gt = c.evaluate.ground_truth.string();
    s.read("ground_truth", gt);
    c.evaluate.ground_truth = gt;
    s.read("thresholds_deg", c.evaluate.thresholds_deg);
    s.read("thresholds_pct", c.evaluate.thresholds_pct);
    s.read("sequence", c.evaluate.sequence);
    s.finish();
  }
  r.finish();
  c.validate();
  return c;
}

json PipelineConfig::to_json() const {
  return {{"input", input.generic_string()},
          {"output", output.generic_string()},
          {"seed", seed},
          {"threads", threads},
          {"resume", resume},
          {"frame_rate", frame_rate},
          {"tau", tau},
          {"mu", mu},
          {"lambda_c", lambda_c},
          {"stages",
           {{"sync", stages.sync},
            {"calibrate", stages.calibrate},
            {"triangulate", stages.triangulate},
            {"scale", stages.scale},
            {"evaluate", stages.evaluate}}},
          {"sync",
           {{"reference", sync.reference},
            {"hop", sync.hop},
            {"window", sync.window},
            {"n_mels", sync.n_mels},
            {"n_coeffs", sync.n_coeffs},
            {"min_prominence", sync.min_prominence},
            {"min_peak_separation", sync.min_peak_separation},
            {"max_distance_delta", sync.max_distance_delta}}},
          {"pairwise",
           {{"budget", pairwise.budget},
            {"min_correspondences", pairwise.min_correspondences},
            {"ransac_iterations", pairwise.ransac_iterations},
            {"inlier_threshold", pairwise.inlier_threshold},
            {"min_inlier_ratio", pairwise.min_inlier_ratio},
            {"refine_iterations", pairwise.refine_iterations}}},
          {"bundle",
           {{"kappa", bundle.kappa},
            {"budget", bundle.budget},
            {"huber_delta", bundle.huber_delta},
            {"max_iterations", bundle.max_iterations},
            {"function_tolerance", bundle.function_tolerance},
            {"tie_focal", bundle.tie_focal},
            {"free_distortion", bundle.free_distortion},
            {"retriangulate_focal_change", bundle.retriangulate_focal_change}}},
          {"scale",
           {{"method", scale.method},
            {"prior", scale.prior.generic_string()},
            {"depth_dir", scale.depth_dir.generic_string()},
            {"zeta", scale.zeta},
            {"lambda_bones", scale.lambda_bones},
            {"lambda_beta", scale.lambda_beta},
            {"delta", scale.delta},
            {"max_iterations", scale.max_iterations},
            {"binary_ply", scale.binary_ply}}},
          {"evaluate",
           {{"ground_truth", evaluate.ground_truth.generic_string()},
            {"thresholds_deg", evaluate.thresholds_deg},
            {"thresholds_pct", evaluate.thresholds_pct},
            {"sequence", evaluate.sequence}}}};
}

void PipelineConfig::validate() const {
  require(threads >= 1, "threads must be >= 1");
  require(frame_rate >= 0, "frame_rate must be >= 0 (0 infers it)");
  require(tau >= 0 && tau < 1, "tau must be in [0, 1)");
  require(mu > 0, "mu must be positive");
  require(lambda_c > 0, "lambda_c must be positive");
  require(sync.hop > 0 && sync.window >= sync.hop && sync.n_mels > 0 && sync.n_coeffs > 0 &&
              sync.n_coeffs <= sync.n_mels,
          "sync MFCC parameters out of range");
  require(sync.min_prominence >= 0 && sync.min_peak_separation >= 0 && sync.max_distance_delta >= 0,
          "sync thresholds must be non-negative");
  require(pairwise.budget >= 5 && pairwise.min_correspondences >= 5, "pairwise budget must be >= 5");
  require(pairwise.ransac_iterations > 0 && pairwise.inlier_threshold > 0, "RANSAC settings must be positive");
  require(pairwise.min_inlier_ratio >= 0 && pairwise.min_inlier_ratio <= 1, "min_inlier_ratio must be in [0, 1]");
  require(pairwise.refine_iterations >= 0, "refine_iterations must be >= 0");
  require(bundle.kappa >= 0 && bundle.kappa < 1, "kappa must be in [0, 1)");
  require(bundle.budget >= 1 && bundle.huber_delta > 0 && bundle.max_iterations >= 0, "bundle settings out of range");
  require(bundle.function_tolerance >= 0 && bundle.retriangulate_focal_change >= 0, "bundle tolerances must be >= 0");
  require(bundle.free_distortion.size() == 5, "free_distortion needs 5 flags (k1, k2, k3, p1, p2)");
  require(scale.method == "bone-prior" || scale.method == "depth" || scale.method == "none",
          "scale.method must be bone-prior, depth or none");
  require(scale.zeta >= 0 && scale.zeta < 1, "zeta must be in [0, 1)");
  require(scale.lambda_bones > 0 && scale.lambda_beta >= 0 && scale.delta > 0 && scale.max_iterations > 0,
          "bone prior weights out of range");
  for (double t : evaluate.thresholds_deg) require(t > 0, "rotation thresholds must be positive");
  for (double t : evaluate.thresholds_pct) require(t > 0, "center thresholds must be positive");
}

fs::path PipelineConfig::prior_path() const { return scale.prior.empty() ? input / "shape_prior.json" : scale.prior; }
fs::path PipelineConfig::depth_path() const { return scale.depth_dir.empty() ? input / "depth" : scale.depth_dir; }
fs::path PipelineConfig::ground_truth_path() const {
  return evaluate.ground_truth.empty() ? input / "ground_truth" : evaluate.ground_truth;
}

fs::path run_stage(const std::string& stage, const PipelineConfig& config) {
  config.validate();
  return execute(make_stage(stage, config), config);
}

json run_pipeline(const PipelineConfig& config) {
  config.validate();
  fs::create_directories(config.output);
  const std::map<std::string, bool> enabled{{"sync", config.stages.sync},
                                            {"calibrate", config.stages.calibrate},
                                            {"triangulate", config.stages.triangulate},
                                            {"scale", config.stages.scale},
                                            {"evaluate", config.stages.evaluate}};
  for (const auto& name : pipeline_stages()) {
    if (!enabled.at(name)) continue;
    if (name == "evaluate" && !fs::exists(config.ground_truth_path() / "cameras.json")) {
      json m = load_manifest(config.output);
      m["notes"].push_back("evaluate skipped: no ground truth");
      write_json_file(config.output / "manifest.json", m);
      continue;
    }
    run_stage(name, config);
  }
  return load_manifest(config.output);
}

}  // namespace polycap

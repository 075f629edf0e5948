#pragma once

#include "polycap/bundle.hpp"
#include "polycap/keystore.hpp"
#include "polycap/pairwise.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace polycap {

struct PipelineConfig {
  std::filesystem::path input = ".";
  std::filesystem::path output = "out";
  std::uint64_t seed = 0;
  int threads = 1;
  bool resume = false;

  struct Stages {
    bool sync = true, calibrate = true, triangulate = true, scale = true, evaluate = true;
  } stages;

  struct Sync {
    std::string reference;        // empty: first camera id in sorted order
    int hop = 128;
    int window = 2048;
    int n_mels = 64;
    int n_coeffs = 20;
    double min_prominence = 0.6;
    double min_peak_separation = 0.01;
    double max_distance_delta = 5.0;  // meters, feasibility report only
  } sync;

  double frame_rate = 0.0;  // 0: inferred from keypoint timestamps
  double tau = 0.7;          // correspondence confidence threshold

  struct Pairwise {
    std::size_t budget = 2000;  // M
    std::size_t min_correspondences = 50;
    int ransac_iterations = 2000;
    double inlier_threshold = 1e-5;
    double min_inlier_ratio = 0.25;
    int refine_iterations = 30;
  } pairwise;

  double mu = 1e-3;

  struct Bundle {
    double kappa = 0.5;
    std::size_t budget = 5000;
    double huber_delta = 2.0;
    int max_iterations = 60;
    double function_tolerance = 1e-10;
    bool tie_focal = true;
    // k1, k2, k3, p1, p2. With a frozen principal point, p1/p2 act as a decentering
    // shift and trade off against the extrinsics unless keypoints fill the image.
    std::vector<bool> free_distortion{true, true, false, false, false};
    double retriangulate_focal_change = 0.05;
  } bundle;

  double lambda_c = 500.0;

  struct Scale {
    std::string method = "bone-prior";  // bone-prior | depth | none
    std::filesystem::path prior;         // empty: <input>/shape_prior.json
    std::filesystem::path depth_dir;     // empty: <input>/depth
    double zeta = 0.5;
    double lambda_bones = 1.0;
    double lambda_beta = 1e-6;
    double delta = 0.05;
    int max_iterations = 500;
    bool binary_ply = false;
  } scale;

  struct Evaluate {
    std::filesystem::path ground_truth;  // empty: <input>/ground_truth
    std::vector<double> thresholds_deg{5.0, 10.0, 15.0};
    std::vector<double> thresholds_pct{5.0, 10.0, 25.0};
    std::string sequence = "sequence";
  } evaluate;

  /// Throws InvalidConfig on unknown keys or out-of-domain values.
  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  std::filesystem::path prior_path() const;
  std::filesystem::path depth_path() const;
  std::filesystem::path ground_truth_path() const;
};

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> names{"sync", "calibrate", "triangulate", "scale", "evaluate"};
  return names;
}

/// Runs exactly one stage, reading earlier artifacts from config.output and
/// updating manifest.json. Returns the stage's primary artifact.
/// Throws MissingPrerequisite when an input artifact is absent.
std::filesystem::path run_stage(const std::string& stage, const PipelineConfig& config);

/// Runs every enabled stage in order and returns the manifest. Evaluation is
/// skipped (and noted) when no ground truth exists.
nlohmann::json run_pipeline(const PipelineConfig& config);

/// Shared input loading, exposed for tools and tests.
std::vector<DetectionRecord> load_detections(const std::filesystem::path& input);
std::map<std::string, double> infer_frame_rates(std::span<const DetectionRecord> records, double fallback);

}  // namespace polycap

#pragma once

#include "polycap/camgeom.hpp"
#include "polycap/keystore.hpp"
#include "polycap/lift3d.hpp"
#include "polycap/raster_io.hpp"
#include "polycap/shape_prior.hpp"
#include "polycap/wav.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace polycap {

struct SceneConfig {
  std::size_t n_cameras = 6;
  double ring_radius = 3.0;          // meters
  double camera_height = 1.5;        // meters
  double height_jitter = 0.2;        // meters, uniform +-
  double azimuth_jitter_deg = 5.0;   // uniform +-
  Vec3 look_at = Vec3(0.0, 0.0, 1.0);
  int image_width = 1280;
  int image_height = 960;
  std::array<double, 2> focal_range{900.0, 1100.0};
  std::array<double, 2> k1_range{-0.3, -0.1};
  std::array<double, 2> k2_range{0.0, 0.05};
  std::array<double, 2> k3_range{0.0, 0.0};
  std::array<double, 2> p_range{-5e-4, 5e-4};  // p1 and p2
  std::size_t n_frames = 1000;
  double frame_rate = 50.0;
  std::size_t n_persons = 1;
  double person_spacing = 1.2;       // meters between person anchors
  double beta_sigma = 1.0;           // shape coefficients ~ N(0, sigma^2)
  std::size_t n_shape = 10;
  double wander_radius = 0.5;        // meters, bound on root excursion
  double noise_px = 1.0;
  /// w = clamp(exp(-|n| / (confidence_scale * sigma)) + U(-jitter, jitter), 0, 1)
  double confidence_scale = 3.0;
  double confidence_jitter = 0.05;
  double occlusion_rate = 0.1;
  double occluded_noise_px = 30.0;
  double occluded_confidence_max = 0.2;
  double lag_max = 2.0;              // seconds; camera 0 has lag 0
  bool audio = true;
  double audio_sample_rate = 48000.0;
  double audio_noise = 0.02;
  std::size_t depth_frames = 2;      // rendered frames per camera
  double joint_radius = 0.03;        // meters, depth proxy disc radius
  double initial_focal_error = 0.05; // relative, uniform +-
  std::uint64_t seed = 1;

  /// Throws InvalidConfig on unknown keys or out-of-domain values.
  static SceneConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

std::string synth_camera_id(std::size_t index);

struct SyntheticScene {
  SceneConfig config;
  SkeletonDef skeleton;
  ShapePrior prior;
  std::vector<CameraModel> cameras;          // ground truth, meters
  std::vector<CameraModel> initial_cameras;  // identity poses, zero distortion, perturbed focal
  std::map<std::string, double> lags;        // seconds, t_global = k / f_r - lag
  std::vector<DetectionRecord> detections;
  std::size_t occluded_samples = 0;
  std::size_t total_samples = 0;
  SkeletonSequence ground_truth;             // camera 0 frames seen by every camera
  std::map<int, Eigen::VectorXd> betas;
  std::map<std::string, AudioTrack> audio;
  std::map<std::string, std::map<long, DepthMap>> depth;  // camera id -> local frame -> map

  /// Ground-truth joints (K x 3, meters) of a person at global time t.
  Eigen::MatrixXd joints_at(int person, double t) const;

  std::vector<double> person_phases;  // motion parameters, 16 per person
  std::vector<Vec3> person_anchor;
};

SyntheticScene generate_scene(const SceneConfig& config);

/// Writes the pipeline's input layout plus a ground_truth/ subtree.
void write_dataset(const SyntheticScene& scene, const std::filesystem::path& directory);

struct CameraPerturbation {
  Vec3 rotation_axis = Vec3::UnitX();
  double rotation_rad = 0.0;
  Vec3 center_offset = Vec3::Zero();
  double focal_scale = 1.0;
  std::array<double, 5> distortion_delta{};  // k1, k2, k3, p1, p2
};

struct PerturbedCameras {
  std::vector<CameraModel> cameras;
  std::vector<CameraPerturbation> perturbations;
  double baseline = 0.0;  // mean pairwise center distance of the input
};

/// R' = exp(theta a) R with |theta| = rot_deg, center offset of norm
/// trans_frac * baseline, focal scaled by (1 + focal_frac), distortion
/// coefficients shifted by U(-dist_delta, dist_delta). Cameras listed in
/// `fixed` keep their pose (the bundle gauge).
PerturbedCameras perturb_cameras(std::span<const CameraModel> cameras, double rot_deg, double trans_frac,
                                 double focal_frac, double dist_delta, std::uint64_t seed,
                                 const std::vector<std::size_t>& fixed = {});

/// Looks from `position` at `target`, z up, image y pointing down.
Pose look_at_pose(const Vec3& position, const Vec3& target);

/// Renders metric z-depth of the ground plane z = 0 and joint discs.
DepthMap render_depth(const CameraModel& camera, const std::vector<Eigen::MatrixXd>& persons, double joint_radius);

}  // namespace polycap

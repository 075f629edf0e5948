#pragma once

#include "polycap/camgeom.hpp"
#include "polycap/keystore.hpp"
#include "polycap/lift3d.hpp"
#include "polycap/raster_io.hpp"
#include "polycap/shape_prior.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace polycap {

struct ScaleResult {
  double alpha = 1.0;                       // scene units -> meters
  Eigen::VectorXd beta;                     // first person (bone prior only)
  std::map<int, Eigen::VectorXd> betas;     // per person (bone prior only)
  std::string method;
  nlohmann::json diagnostics = nlohmann::json::object();
};

struct BonePriorConfig {
  double lambda_bones = 1.0;
  double lambda_beta = 1e-6;  // bone residuals are in metres, so the weight is small
  double delta = 0.05;  // meters
  int max_iterations = 500;
};

/// Per-bone length aggregated over frames: confidence-weighted median length,
/// mean per-frame confidence sqrt(s_k s_l) (zero for frames where an endpoint is invisible).
struct BoneStatistic {
  int person = 0;
  std::size_t bone = 0;
  double length = 0.0;
  double confidence = 0.0;
};
std::vector<BoneStatistic> aggregate_bones(const SkeletonSequence& skeleton, const ShapePrior& prior);

/// Shared alpha, one beta per person. Throws NoReliableBones, DimensionMismatch.
ScaleResult estimate_scale_bone_prior(const SkeletonSequence& skeleton, const ShapePrior& prior,
                                      const BonePriorConfig& cfg = {});

/// One candidate (view, frame) for the depth route: the 3D joints of one person
/// and the raw 2D detections of that person in the view.
struct DepthCandidate {
  std::size_t camera = 0;
  long frame_index = 0;  // camera-local
  const DepthMap* depth = nullptr;
  std::vector<Vec3> joints;            // scene units, NaN when invisible
  std::vector<Keypoint2D> detections;  // same joint order
};

struct DepthScaleConfig {
  double zeta = 0.5;
  double lambda_c = 500.0;  // on focal-normalized residuals
};

/// Frame-selection heuristic h = mean_k exp(-lambda_c * |pi(X_k) - x_k| / f).
double depth_frame_score(const DepthCandidate& candidate, const CameraModel& camera, double lambda_c);

/// Picks the best-scoring candidate per camera, then averages metric/scene depth
/// ratios of confident keypoints. Throws NoDepthSamples.
ScaleResult estimate_scale_depth(std::span<const DepthCandidate> candidates, std::span<const CameraModel> cameras,
                                 const DepthScaleConfig& cfg = {});

struct Scene {
  SkeletonSequence skeletons;
  std::vector<CameraModel> cameras;
  std::vector<Vec3> points;
};

/// Multiplies every 3D position and camera translation by alpha. Throws NonPositiveScale.
Scene apply_scale(const Scene& scene, double alpha);

nlohmann::json scale_result_json(const ScaleResult& result);

}  // namespace polycap

#pragma once

#include "polycap/camgeom.hpp"
#include "polycap/lift3d.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polycap {

/// x -> scale * R x + t
struct AlignmentTransform {
  double scale = 1.0;
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
  AlignmentTransform inverse() const;
};

/// Least-squares similarity (or rigid) transform mapping source onto target,
/// never a reflection. Throws DegenerateConfiguration.
AlignmentTransform similarity_align(std::span<const Vec3> source, std::span<const Vec3> target, bool allow_scale);

/// RMS distance of the centers from their centroid.
double scene_scale(std::span<const Vec3> centers);

struct CameraMetrics {
  double te = 0.0, s_te = 0.0;  // scene units of the ground truth
  double ae = 0.0;              // degrees
  double fov = 0.0;             // degrees
  std::map<double, double> rra, cca, s_cca;
  AlignmentTransform rigid, similarity;
};

/// Cameras are matched by id. Throws IdMismatch.
CameraMetrics camera_metrics(std::span<const CameraModel> estimated, std::span<const CameraModel> ground_truth,
                             const std::vector<double>& thresholds_deg,
                             const std::vector<double>& thresholds_pct,
                             std::optional<double> scale_override = std::nullopt);

struct PoseMetrics {
  double w_mpjpe = 0.0;
  double pa_mpjpe = 0.0;
  std::size_t n_joints = 0;
  std::size_t n_instances = 0;
};

/// Joints compared where both sides are visible; instances matched by
/// (frame_index, person_id). Throws EmptyOverlap.
PoseMetrics pose_metrics(const SkeletonSequence& estimated, const SkeletonSequence& ground_truth,
                         const AlignmentTransform& alignment);

/// Mean over joints of the per-instance similarity-Procrustes residual distances.
double pa_mpjpe_instance(std::span<const Vec3> estimated, std::span<const Vec3> ground_truth);

nlohmann::json metrics_json(const CameraMetrics& cam, const std::optional<PoseMetrics>& pose);
std::string metrics_csv(const std::string& sequence, const CameraMetrics& cam, const std::optional<PoseMetrics>& pose);

}  // namespace polycap

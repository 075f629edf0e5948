#pragma once

#include "polycap/camgeom.hpp"
#include "polycap/keystore.hpp"
#include "polycap/raster_io.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace polycap {

struct ConfidenceParams {
  double lambda_c = 500.0;  // decay on focal-normalized residuals
};

struct JointEstimate {
  Vec3 position = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
  double confidence = 0.0;  // [0, 1]
  bool visible = false;
};

/// One person at one instant.
struct SkeletonFrame {
  long frame_index = 0;  // anchor camera frame index
  double timestamp = 0.0;
  int person_id = 0;
  std::vector<JointEstimate> joints;
};

/// Ordered by (frame_index, person_id).
struct SkeletonSequence {
  std::vector<SkeletonFrame> frames;
};

/// Raw (distorted) detection of one joint in one view.
struct ViewObservation {
  std::size_t camera = 0;
  Vec2 pixel = Vec2::Zero();
  double weight = 0.0;
};

/// Mean pairwise reprojection confidence over view pairs with both weights > 0.
/// Zero when no such pair exists or X is not finite.
double point_confidence(const Vec3& X, std::span<const ViewObservation> observations,
                        std::span<const CameraModel> cameras, const ConfidenceParams& params);

/// Undistorts and triangulates a single joint; invisible on failure.
JointEstimate triangulate_joint(std::span<const ViewObservation> observations, std::span<const CameraModel> cameras,
                                const ConfidenceParams& params);

/// Triangulates every (frame group, person, joint) of the timeline.
SkeletonSequence triangulate_sequence(const DetectionTimeline& timeline, const std::vector<CameraModel>& cameras,
                                      const ConfidenceParams& params, int threads = 1);

/// Observations of every joint of `person` in a frame group, in camera order.
std::vector<std::vector<ViewObservation>> group_observations(const DetectionTimeline& timeline,
                                                             const FrameGroup& group, int person);

struct DepthView {
  std::size_t camera = 0;
  const DepthMap* depth = nullptr;
};

/// Back-projects every `stride`-th valid pixel of each depth map to world
/// coordinates. Throws DimensionMismatch when a raster disagrees with its camera.
std::vector<Vec3> merge_pointmaps(std::span<const DepthView> views, std::span<const CameraModel> cameras, int stride);

void write_skeleton_sequence(const std::filesystem::path& path, const SkeletonSequence& sequence);
SkeletonSequence read_skeleton_sequence(const std::filesystem::path& path);

}  // namespace polycap

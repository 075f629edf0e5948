#pragma once

#include "polycap/camgeom.hpp"
#include "polycap/five_point.hpp"
#include "polycap/keystore.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace polycap {

/// Squared first-order geometric error of x_j^T E x_i = 0, both points in
/// normalized (K^-1) coordinates. Throws ZeroDenominator at a double epipole.
double sampson_distance(const Mat3& E, const Vec2& x_i, const Vec2& x_j);

struct RansacConfig {
  int iterations = 2000;
  double inlier_threshold = 1e-5;  // Sampson, normalized units
  std::uint64_t seed = 0;
  double min_inlier_ratio = 0.25;
  int refine_iterations = 30;
};

/// Relative pose of camera j with respect to camera i: X_j = R X_i + t_dir * lambda.
struct PairCalibration {
  std::size_t cam_i = 0;
  std::size_t cam_j = 0;
  Mat3 E = Mat3::Zero();
  Quat rotation = Quat::Identity();
  Vec3 translation_dir = Vec3::UnitX();
  std::vector<std::size_t> inliers;
  double score = 0.0;  // mean Sampson distance over inliers
  std::size_t n_correspondences = 0;
  bool eight_point_fallback = false;
  double cheirality_fraction = 0.0;

  Mat3 R() const { return rotation.toRotationMatrix(); }
};

/// RANSAC over five-point hypotheses, then inlier refit and cheirality
/// disambiguation. Throws NotEnoughCorrespondences, DegenerateConfiguration,
/// LowInlierRatio.
PairCalibration estimate_relative_pose(std::span<const Correspondence> corrs, const Intrinsics& K_i,
                                       const Intrinsics& K_j, const RansacConfig& cfg);

/// Same estimator on points already in normalized coordinates.
PairCalibration estimate_relative_pose_normalized(std::span<const Vec2> x_i, std::span<const Vec2> x_j,
                                                  const RansacConfig& cfg);

/// Inlier classification, cheirality choice and refit starting from a given
/// essential matrix. Invariant under E -> cE.
PairCalibration refine_from_essential(const Mat3& E, std::span<const Vec2> x_i, std::span<const Vec2> x_j,
                                      const RansacConfig& cfg);

nlohmann::json pair_diagnostics(const PairCalibration& pair, const std::vector<std::string>& camera_ids);

}  // namespace polycap

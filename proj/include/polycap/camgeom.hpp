#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polycap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Pinhole intrinsics in pixels.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Mat3 matrix() const;
  Vec2 to_normalized(const Vec2& pixel) const {
    return {(pixel.x() - cx) / fx, (pixel.y() - cy) / fy};
  }
  Vec2 to_pixel(const Vec2& normalized) const {
    return {fx * normalized.x() + cx, fy * normalized.y() + cy};
  }
  /// Throws InvalidCamera unless fx, fy > 0 and the principal point lies in the image.
  void validate() const;
};

/// Brown-Conrady lens model acting on normalized image coordinates.
struct Distortion {
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;

  bool is_zero() const { return k1 == 0 && k2 == 0 && k3 == 0 && p1 == 0 && p2 == 0; }
  Vec2 apply(const Vec2& n) const;
  /// d(apply)/d(n)
  Eigen::Matrix2d jacobian(const Vec2& n) const;

  /// File order is [k1, k2, p1, p2, k3].
  std::array<double, 5> to_array() const { return {k1, k2, p1, p2, k3}; }
  static Distortion from_array(const std::array<double, 5>& a) {
    return Distortion{a[0], a[1], a[4], a[2], a[3]};
  }
};

/// Rigid world->camera transform X_c = R X_w + t, rotation stored as a unit quaternion.
struct Pose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose from_rt(const Mat3& R, const Vec3& t);

  Mat3 R() const { return rotation.toRotationMatrix(); }
  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  /// Camera center in world coordinates.
  Vec3 center() const { return -(rotation.conjugate() * translation); }
  Pose inverse() const;
  void renormalize() { rotation.normalize(); }

  /// (a * b).apply(x) == a.apply(b.apply(x))
  friend Pose operator*(const Pose& a, const Pose& b);
};

struct CameraModel {
  std::string id;
  Intrinsics intrinsics;
  Distortion distortion;
  Pose pose;
};

/// Throws InvalidCamera when intrinsics are out of domain, a coefficient is not
/// finite, or the distortion map folds over inside the image footprint.
void validate_camera(const CameraModel& camera);
void check_distortion_injective(const Intrinsics& intrinsics, const Distortion& distortion);
/// False where check_distortion_injective would throw.
bool distortion_injective(const Intrinsics& intrinsics, const Distortion& distortion);

/// World point to distorted pixel. Throws NonPositiveDepth when z_c <= 0.
Vec2 project(const Vec3& point_world, const CameraModel& camera);
/// Same as project() but returns nullopt for points behind the camera.
std::optional<Vec2> project_if_visible(const Vec3& point_world, const CameraModel& camera);

/// Inverts the distortion map for one normalized point. Throws NoConvergence.
Vec2 undistort_normalized(const Vec2& distorted, const Distortion& distortion);
/// As above, but nullopt when no ideal point maps onto `distorted` (strong barrel
/// distortion leaves the outer image corners unreachable).
std::optional<Vec2> try_undistort_normalized(const Vec2& distorted, const Distortion& distortion);
Vec2 undistort_pixel(const Vec2& pixel, const Intrinsics& intrinsics, const Distortion& distortion);
std::vector<Vec2> undistort_points(std::span<const Vec2> pixels, const Intrinsics& intrinsics,
                                   const Distortion& distortion);

struct WeightedObservation {
  std::size_t camera = 0;
  Vec2 pixel = Vec2::Zero();  // undistorted pixel coordinates
  double weight = 1.0;
};

/// Weighted DLT. Each view's two rows are scaled by its weight. Throws
/// InsufficientViews (< 2 positive weights) or DegenerateGeometry.
Vec3 triangulate_weighted_dlt(std::span<const WeightedObservation> observations,
                              std::span<const CameraModel> cameras);

/// Plain DLT over the same conditioned system, every view weighted equally.
Vec3 triangulate_dlt(std::span<const WeightedObservation> observations,
                     std::span<const CameraModel> cameras);

Mat3 skew(const Vec3& v);
/// Geodesic angle in radians between two rotations.
double rotation_angle_between(const Quat& a, const Quat& b);
Quat quat_from_rotation_vector(const Vec3& omega);

}  // namespace polycap

#include "polycap/camgeom.hpp"

#include "polycap/error.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <sstream>

namespace polycap {

namespace {

constexpr int kUndistortMaxIterations = 50;
constexpr double kUndistortTolerance = 1e-10;
constexpr double kDegenerateSingularRatio = 0.99;

bool finite(double v) { return std::isfinite(v); }

}  // namespace

Mat3 Intrinsics::matrix() const {
  Mat3 K;
  K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return K;
}

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0) || !finite(fx) || !finite(fy)) {
    fail(ErrorCode::InvalidCamera, "focal lengths must be positive and finite");
  }
  if (width <= 0 || height <= 0) fail(ErrorCode::InvalidCamera, "image size must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
    fail(ErrorCode::InvalidCamera, "principal point outside the image");
  }
}

Vec2 Distortion::apply(const Vec2& n) const {
  const double x = n.x(), y = n.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  return {x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
          y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y};
}

Eigen::Matrix2d Distortion::jacobian(const Vec2& n) const {
  const double x = n.x(), y = n.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  // d(radial)/d(r2)
  const double dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);
  const double drx = 2.0 * x * dradial;
  const double dry = 2.0 * y * dradial;
  Eigen::Matrix2d J;
  J(0, 0) = radial + x * drx + 2.0 * p1 * y + 6.0 * p2 * x;
  J(0, 1) = x * dry + 2.0 * p1 * x + 2.0 * p2 * y;
  J(1, 0) = y * drx + 2.0 * p1 * x + 2.0 * p2 * y;
  J(1, 1) = radial + y * dry + 6.0 * p1 * y + 2.0 * p2 * x;
  return J;
}

Pose Pose::from_rt(const Mat3& R, const Vec3& t) {
  Pose p;
  p.rotation = Quat(R);
  p.rotation.normalize();
  p.translation = t;
  return p;
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.conjugate();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose operator*(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = a.rotation * b.rotation;
  out.rotation.normalize();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

namespace {

/// First normalized point of the image footprint where the distortion
/// Jacobian is not positive definite in orientation.
std::optional<Vec2> distortion_fold(const Intrinsics& intr, const Distortion& dist) {
  if (dist.is_zero()) return std::nullopt;
  // Grid over the pinhole footprint of the image in normalized coordinates.
  constexpr int kSteps = 24;
  const Vec2 lo = intr.to_normalized(Vec2(0.0, 0.0));
  const Vec2 hi = intr.to_normalized(Vec2(intr.width, intr.height));
  for (int i = 0; i <= kSteps; ++i) {
    for (int j = 0; j <= kSteps; ++j) {
      const Vec2 n(lo.x() + (hi.x() - lo.x()) * i / kSteps, lo.y() + (hi.y() - lo.y()) * j / kSteps);
      if (!(dist.jacobian(n).determinant() > 0.0)) return n;
    }
  }
  return std::nullopt;
}

bool coefficients_finite(const Distortion& dist) {
  for (double c : {dist.k1, dist.k2, dist.k3, dist.p1, dist.p2}) {
    if (!finite(c)) return false;
  }
  return true;
}

}  // namespace

bool distortion_injective(const Intrinsics& intr, const Distortion& dist) {
  return coefficients_finite(dist) && !distortion_fold(intr, dist);
}

void check_distortion_injective(const Intrinsics& intr, const Distortion& dist) {
  if (!coefficients_finite(dist)) fail(ErrorCode::InvalidCamera, "distortion coefficient is not finite");
  if (const auto n = distortion_fold(intr, dist)) {
    std::ostringstream os;
    os << "distortion map folds over at normalized point (" << n->x() << ", " << n->y() << ")";
    fail(ErrorCode::InvalidCamera, os.str());
  }
}

void validate_camera(const CameraModel& camera) {
  camera.intrinsics.validate();
  check_distortion_injective(camera.intrinsics, camera.distortion);
  if (std::abs(camera.pose.rotation.norm() - 1.0) > 1e-9) {
    fail(ErrorCode::InvalidCamera, "rotation quaternion is not unit length");
  }
  if (!camera.pose.translation.allFinite()) fail(ErrorCode::InvalidCamera, "translation not finite");
}

std::optional<Vec2> project_if_visible(const Vec3& point_world, const CameraModel& camera) {
  const Vec3 pc = camera.pose.apply(point_world);
  if (!(pc.z() > 0.0)) return std::nullopt;
  const Vec2 n(pc.x() / pc.z(), pc.y() / pc.z());
  return camera.intrinsics.to_pixel(camera.distortion.apply(n));
}

Vec2 project(const Vec3& point_world, const CameraModel& camera) {
  auto px = project_if_visible(point_world, camera);
  if (!px) fail(ErrorCode::NonPositiveDepth, "point is behind camera " + camera.id);
  return *px;
}

namespace {

/// Damped Newton on the distortion map; returns the final residual norm.
double newton_undistort(const Vec2& distorted, const Distortion& distortion, Vec2& n) {
  n = distorted;
  Vec2 residual = distortion.apply(n) - distorted;
  double err = residual.norm();
  for (int it = 0; it < kUndistortMaxIterations && err >= kUndistortTolerance; ++it) {
    const Eigen::Matrix2d J = distortion.jacobian(n);
    const double det = J.determinant();
    if (!(std::abs(det) > 1e-14)) break;
    const Vec2 step = J.inverse() * residual;
    // Damping: halve the step until the residual shrinks.
    double scale = 1.0;
    bool improved = false;
    for (int k = 0; k < 30; ++k) {
      const Vec2 candidate = n - scale * step;
      const Vec2 r = distortion.apply(candidate) - distorted;
      if (r.norm() < err) {
        n = candidate;
        residual = r;
        err = r.norm();
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
  }
  return err;
}

}  // namespace

Vec2 undistort_normalized(const Vec2& distorted, const Distortion& distortion) {
  if (distortion.is_zero()) return distorted;
  Vec2 n;
  const double err = newton_undistort(distorted, distortion, n);
  if (!(err < kUndistortTolerance)) {
    std::ostringstream os;
    os << "undistortion did not converge (residual " << err << ")";
    fail(ErrorCode::NoConvergence, os.str());
  }
  return n;
}

std::optional<Vec2> try_undistort_normalized(const Vec2& distorted, const Distortion& distortion) {
  if (distortion.is_zero()) return distorted;
  Vec2 n;
  if (!(newton_undistort(distorted, distortion, n) < kUndistortTolerance)) return std::nullopt;
  return n;
}

Vec2 undistort_pixel(const Vec2& pixel, const Intrinsics& intrinsics, const Distortion& distortion) {
  return intrinsics.to_pixel(undistort_normalized(intrinsics.to_normalized(pixel), distortion));
}

std::vector<Vec2> undistort_points(std::span<const Vec2> pixels, const Intrinsics& intrinsics,
                                   const Distortion& distortion) {
  std::vector<Vec2> out;
  out.reserve(pixels.size());
  for (const auto& p : pixels) out.push_back(undistort_pixel(p, intrinsics, distortion));
  return out;
}

namespace {

Vec3 solve_dlt(std::span<const WeightedObservation> observations, std::span<const CameraModel> cameras,
               bool use_weights) {
  std::size_t active = 0;
  for (const auto& o : observations) {
    if (o.camera >= cameras.size()) fail(ErrorCode::InvalidCamera, "observation camera index out of range");
    if (o.weight > 0.0) ++active;
  }
  if (active < 2) fail(ErrorCode::InsufficientViews, "need at least two weighted observations");

  // Condition the world frame: center on the camera centers, unit RMS spread.
  Vec3 centroid = Vec3::Zero();
  for (const auto& o : observations) {
    if (o.weight > 0.0) centroid += cameras[o.camera].pose.center();
  }
  centroid /= static_cast<double>(active);
  double spread = 0.0;
  for (const auto& o : observations) {
    if (o.weight > 0.0) spread += (cameras[o.camera].pose.center() - centroid).squaredNorm();
  }
  spread = std::sqrt(spread / static_cast<double>(active));
  if (!(spread > 1e-12)) fail(ErrorCode::DegenerateGeometry, "camera centers coincide");

  Eigen::MatrixXd A(2 * active, 4);
  Eigen::Index row = 0;
  for (const auto& o : observations) {
    if (!(o.weight > 0.0)) continue;
    const CameraModel& cam = cameras[o.camera];
    const Vec2 n = cam.intrinsics.to_normalized(o.pixel);
    const Mat3 R = cam.pose.R();
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = R;
    P.col(3) = (R * centroid + cam.pose.translation) / spread;
    const double w = use_weights ? o.weight : 1.0;
    A.row(row++) = w * (n.x() * P.row(2) - P.row(0));
    A.row(row++) = w * (n.y() * P.row(2) - P.row(1));
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 4 || !(sv(2) > 0.0) || sv(3) / sv(2) > kDegenerateSingularRatio) {
    fail(ErrorCode::DegenerateGeometry, "triangulation system is ill-conditioned");
  }
  const Eigen::Vector4d X = svd.matrixV().col(3);
  if (!(std::abs(X(3)) > 1e-12 * X.head<3>().norm())) {
    fail(ErrorCode::DegenerateGeometry, "triangulated point is at infinity");
  }
  return centroid + spread * X.head<3>() / X(3);
}

}  // namespace

Vec3 triangulate_weighted_dlt(std::span<const WeightedObservation> observations,
                              std::span<const CameraModel> cameras) {
  return solve_dlt(observations, cameras, true);
}

Vec3 triangulate_dlt(std::span<const WeightedObservation> observations,
                     std::span<const CameraModel> cameras) {
  return solve_dlt(observations, cameras, false);
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}

double rotation_angle_between(const Quat& a, const Quat& b) {
  const Quat rel = a.normalized().conjugate() * b.normalized();
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

Quat quat_from_rotation_vector(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(angle, omega / angle));
}

}  // namespace polycap

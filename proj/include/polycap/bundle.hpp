#pragma once

#include "polycap/camgeom.hpp"
#include "polycap/keystore.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace polycap {

struct BaObservation {
  std::size_t camera = 0;
  std::size_t point = 0;
  Vec2 pixel = Vec2::Zero();  // raw (distorted) detection
  double weight = 1.0;        // [0, 1]
};

struct BaProblem {
  std::vector<CameraModel> cameras;
  std::vector<Vec3> points;
  std::vector<BaObservation> observations;
  double huber_delta = 2.0;  // pixels

  /// Throws InvalidConfig unless indices are in range, weights lie in [0, 1]
  /// and every point has at least two observations.
  void validate() const;
};

/// Keeps keypoints detected above kappa in at least two views, subsamples
/// `budget` of them uniformly with `seed`, and initializes each point by
/// weighted DLT. Only views above kappa become observations. Throws
/// NoTriangulablePoints.
BaProblem select_ba_points(const DetectionTimeline& timeline, const std::vector<CameraModel>& cameras,
                           double kappa, std::size_t budget, std::uint64_t seed, double huber_delta = 2.0);

struct BaPassSpec {
  bool poses = true;
  bool points = true;
  bool focal = false;
  bool distortion = false;
};

struct BaConfig {
  std::vector<BaPassSpec> passes = {{true, true, false, false}, {true, true, true, false}, {true, true, true, true}};
  int max_iterations = 60;
  double function_tolerance = 1e-10;  // relative objective decrease
  bool tie_focal = true;              // single focal, fy/fx fixed at its initial ratio
  std::array<bool, 5> free_distortion = {true, true, true, true, true};  // k1, k2, k3, p1, p2
  std::optional<std::size_t> gauge_camera = 0;
  double retriangulate_focal_change = 0.05;
  double divergence_tolerance = 1e-9;  // relative
};

struct BaPassReport {
  int pass = 0;
  int iterations = 0;
  int accepted_steps = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double rms_px = 0.0;                  // per-coordinate RMS over weighted observations
  std::vector<double> objective_trace;  // after each accepted step, starting with the initial value
  bool retriangulated_before = false;
};

struct BaResult {
  BaProblem problem;
  std::vector<BaPassReport> reports;
};

/// Huber function: quadratic below delta, linear above.
double huber(double a, double delta);

/// Confidence-weighted mean of Huber-robustified reprojection residual norms.
double ba_objective(const BaProblem& problem);
double reprojection_rms(const BaProblem& problem);

/// Free-parameter layout of one pass. Camera-local slots are
/// [w0 w1 w2 t0 t1 t2 f fy k1 k2 k3 p1 p2]; rotations update as R <- exp(w) R.
class BaLayout {
 public:
  static constexpr int kCameraSlots = 13;

  BaLayout(const BaProblem& problem, const BaPassSpec& pass, const BaConfig& config);

  std::size_t camera_dims() const { return camera_dims_; }
  std::size_t dims() const { return camera_dims_ + 3 * n_free_points_; }
  int camera_slot(std::size_t camera, int local) const { return camera_slots_[camera][static_cast<std::size_t>(local)]; }
  long point_offset(std::size_t point) const { return point_offset_[point]; }
  double aspect(std::size_t camera) const { return aspect_[camera]; }
  bool tie_focal() const { return tie_focal_; }

  BaProblem apply(const BaProblem& problem, const Eigen::VectorXd& delta) const;

 private:
  std::vector<std::array<int, kCameraSlots>> camera_slots_;
  std::vector<long> point_offset_;
  std::vector<double> aspect_;
  std::size_t camera_dims_ = 0;
  std::size_t n_free_points_ = 0;
  bool tie_focal_ = true;
};

/// Analytic gradient of ba_objective in the layout's parameterization.
Eigen::VectorXd ba_gradient(const BaProblem& problem, const BaLayout& layout);

/// Residual and Jacobians of one observation (camera-local slots, point).
struct ObservationLinearization {
  Vec2 residual = Vec2::Zero();
  Eigen::Matrix<double, 2, BaLayout::kCameraSlots> J_camera = Eigen::Matrix<double, 2, BaLayout::kCameraSlots>::Zero();
  Eigen::Matrix<double, 2, 3> J_point = Eigen::Matrix<double, 2, 3>::Zero();
  bool valid = false;  // false when the point is behind the camera
};
ObservationLinearization linearize_observation(const CameraModel& camera, double aspect, bool tie_focal,
                                               const Vec3& point, const Vec2& pixel);

/// Runs the configured passes. The gauge camera's pose is never modified.
/// Throws DivergedPass, RankDeficient.
BaResult run_bundle_adjustment(BaProblem problem, const BaConfig& config = {});

nlohmann::json pass_reports_json(const std::vector<BaPassReport>& reports);

}  // namespace polycap

#include "polycap/bundle.hpp"

#include "polycap/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace polycap {

namespace {

constexpr int kSlots = BaLayout::kCameraSlots;
using CamJac = Eigen::Matrix<double, 2, kSlots>;
using CamBlock = Eigen::Matrix<double, kSlots, 3>;

double weight_sum(const BaProblem& problem) {
  double s = 0.0;
  for (const auto& o : problem.observations) s += o.weight;
  if (!(s > 0)) fail(ErrorCode::InvalidConfig, "bundle problem has no positive observation weight");
  return s;
}

// Robust IRLS weight: w * psi(a) / a for the Huber function.
double irls_weight(double w, double a, double delta) { return a <= delta ? w : w * delta / a; }

std::vector<std::vector<std::size_t>> observations_by_point(const BaProblem& problem) {
  std::vector<std::vector<std::size_t>> out(problem.points.size());
  for (std::size_t k = 0; k < problem.observations.size(); ++k) out[problem.observations[k].point].push_back(k);
  return out;
}

std::optional<Vec3> retriangulate(const BaProblem& problem, const std::vector<std::size_t>& obs_ids,
                                  std::size_t point) {
  std::vector<WeightedObservation> views;
  for (std::size_t k : obs_ids) {
    const auto& o = problem.observations[k];
    if (!(o.weight > 0)) continue;
    const auto& cam = problem.cameras[o.camera];
    views.push_back({o.camera, undistort_pixel(o.pixel, cam.intrinsics, cam.distortion), o.weight});
  }
  try {
    const Vec3 X = triangulate_weighted_dlt(views, problem.cameras);
    for (std::size_t k : obs_ids) {
      if (!((problem.cameras[problem.observations[k].camera].pose.apply(X)).z() > 0)) return std::nullopt;
    }
    (void)point;
    return X;
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

void BaProblem::validate() const {
  if (!(huber_delta > 0)) fail(ErrorCode::InvalidConfig, "Huber delta must be positive");
  std::vector<int> count(points.size(), 0);
  for (const auto& o : observations) {
    if (o.camera >= cameras.size() || o.point >= points.size()) {
      fail(ErrorCode::InvalidConfig, "observation index out of range");
    }
    if (!(o.weight >= 0 && o.weight <= 1)) fail(ErrorCode::InvalidConfig, "observation weight outside [0, 1]");
    ++count[o.point];
  }
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (count[p] < 2) fail(ErrorCode::InvalidConfig, "point " + std::to_string(p) + " has fewer than 2 views");
  }
}

double huber(double a, double delta) { return a <= delta ? 0.5 * a * a : delta * (a - 0.5 * delta); }

ObservationLinearization linearize_observation(const CameraModel& camera, double aspect, bool tie_focal,
                                               const Vec3& point, const Vec2& pixel) {
  ObservationLinearization out;
  const Mat3 R = camera.pose.R();
  const Vec3 RX = R * point;
  const Vec3 Xc = RX + camera.pose.translation;
  if (!(Xc.z() > 0)) return out;
  const double iz = 1.0 / Xc.z();
  const Vec2 n(Xc.x() * iz, Xc.y() * iz);
  const Distortion& dist = camera.distortion;
  const Intrinsics& K = camera.intrinsics;
  const Vec2 d = dist.apply(n);
  out.residual = Vec2(K.fx * d.x() + K.cx, K.fy * d.y() + K.cy) - pixel;

  Eigen::Matrix<double, 2, 3> dn;
  dn << iz, 0.0, -n.x() * iz, 0.0, iz, -n.y() * iz;
  const Eigen::Matrix2d F = Eigen::Vector2d(K.fx, K.fy).asDiagonal();
  const Eigen::Matrix<double, 2, 3> duv_dXc = F * dist.jacobian(n) * dn;
  out.J_point = duv_dXc * R;
  out.J_camera.block<2, 3>(0, 0) = duv_dXc * (-skew(RX));
  out.J_camera.block<2, 3>(0, 3) = duv_dXc;
  if (tie_focal) {
    out.J_camera.col(6) = Vec2(d.x(), aspect * d.y());
  } else {
    out.J_camera.col(6) = Vec2(d.x(), 0.0);
    out.J_camera.col(7) = Vec2(0.0, d.y());
  }
  const double x = n.x(), y = n.y();
  const double r2 = x * x + y * y;
  out.J_camera.col(8) = F * (n * r2);
  out.J_camera.col(9) = F * (n * r2 * r2);
  out.J_camera.col(10) = F * (n * r2 * r2 * r2);
  out.J_camera.col(11) = F * Vec2(2.0 * x * y, r2 + 2.0 * y * y);
  out.J_camera.col(12) = F * Vec2(r2 + 2.0 * x * x, 2.0 * x * y);
  out.valid = true;
  return out;
}

double ba_objective(const BaProblem& problem) {
  const double wsum = weight_sum(problem);
  double total = 0.0;
  for (const auto& o : problem.observations) {
    const auto& cam = problem.cameras[o.camera];
    const Vec3 Xc = cam.pose.apply(problem.points[o.point]);
    if (!(Xc.z() > 0)) return std::numeric_limits<double>::infinity();
    if (o.weight == 0.0) continue;
    const Vec2 r = project(problem.points[o.point], cam) - o.pixel;
    total += o.weight * huber(r.norm(), problem.huber_delta);
  }
  return total / wsum;
}

double reprojection_rms(const BaProblem& problem) {
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& o : problem.observations) {
    if (!(o.weight > 0)) continue;
    const auto vis = project_if_visible(problem.points[o.point], problem.cameras[o.camera]);
    if (!vis) return std::numeric_limits<double>::infinity();
    sq += (*vis - o.pixel).squaredNorm();
    ++n;
  }
  return n ? std::sqrt(sq / (2.0 * static_cast<double>(n))) : 0.0;
}

BaLayout::BaLayout(const BaProblem& problem, const BaPassSpec& pass, const BaConfig& config)
    : tie_focal_(config.tie_focal) {
  const std::size_t nc = problem.cameras.size();
  if (pass.poses) {
    if (!config.gauge_camera) fail(ErrorCode::RankDeficient, "poses are free but no gauge camera is fixed");
    if (*config.gauge_camera >= nc) fail(ErrorCode::RankDeficient, "gauge camera index out of range");
  }
  camera_slots_.resize(nc);
  aspect_.resize(nc);
  int next = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    auto& slots = camera_slots_[c];
    slots.fill(-1);
    aspect_[c] = problem.cameras[c].intrinsics.fy / problem.cameras[c].intrinsics.fx;
    if (pass.poses && c != *config.gauge_camera) {
      for (int s = 0; s < 6; ++s) slots[static_cast<std::size_t>(s)] = next++;
    }
    if (pass.focal) {
      slots[6] = next++;
      if (!tie_focal_) slots[7] = next++;
    }
    if (pass.distortion) {
      for (int s = 0; s < 5; ++s) {
        if (config.free_distortion[static_cast<std::size_t>(s)]) slots[static_cast<std::size_t>(8 + s)] = next++;
      }
    }
  }
  camera_dims_ = static_cast<std::size_t>(next);
  point_offset_.assign(problem.points.size(), -1);
  if (pass.points) {
    for (std::size_t p = 0; p < problem.points.size(); ++p) {
      point_offset_[p] = static_cast<long>(camera_dims_ + 3 * p);
    }
    n_free_points_ = problem.points.size();
  }
}

BaProblem BaLayout::apply(const BaProblem& problem, const Eigen::VectorXd& delta) const {
  BaProblem out = problem;
  const auto get = [&](std::size_t c, int s) {
    const int g = camera_slots_[c][static_cast<std::size_t>(s)];
    return g < 0 ? 0.0 : delta(g);
  };
  for (std::size_t c = 0; c < out.cameras.size(); ++c) {
    auto& cam = out.cameras[c];
    const auto& slots = camera_slots_[c];
    if (slots[0] >= 0) {
      const Vec3 w(get(c, 0), get(c, 1), get(c, 2));
      cam.pose.rotation = (quat_from_rotation_vector(w) * cam.pose.rotation).normalized();
      cam.pose.translation += Vec3(get(c, 3), get(c, 4), get(c, 5));
    }
    if (slots[6] >= 0) {
      cam.intrinsics.fx += get(c, 6);
      if (tie_focal_) {
        cam.intrinsics.fy = aspect_[c] * cam.intrinsics.fx;
      } else {
        cam.intrinsics.fy += get(c, 7);
      }
    }
    cam.distortion.k1 += get(c, 8);
    cam.distortion.k2 += get(c, 9);
    cam.distortion.k3 += get(c, 10);
    cam.distortion.p1 += get(c, 11);
    cam.distortion.p2 += get(c, 12);
  }
  for (std::size_t p = 0; p < out.points.size(); ++p) {
    if (point_offset_[p] >= 0) out.points[p] += delta.segment<3>(point_offset_[p]);
  }
  return out;
}

Eigen::VectorXd ba_gradient(const BaProblem& problem, const BaLayout& layout) {
  const double wsum = weight_sum(problem);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.dims()));
  for (const auto& o : problem.observations) {
    if (o.weight == 0.0) continue;
    const auto lin = linearize_observation(problem.cameras[o.camera], layout.aspect(o.camera), layout.tie_focal(),
                                           problem.points[o.point], o.pixel);
    if (!lin.valid) fail(ErrorCode::NonPositiveDepth, "point behind camera in gradient evaluation");
    const double omega = irls_weight(o.weight, lin.residual.norm(), problem.huber_delta);
    const Eigen::Matrix<double, kSlots, 1> gc = omega * lin.J_camera.transpose() * lin.residual;
    for (int s = 0; s < kSlots; ++s) {
      const int idx = layout.camera_slot(o.camera, s);
      if (idx >= 0) g(idx) += gc(s);
    }
    const long po = layout.point_offset(o.point);
    if (po >= 0) g.segment<3>(po) += omega * lin.J_point.transpose() * lin.residual;
  }
  return g / wsum;
}

namespace {

struct NormalEquations {
  Eigen::MatrixXd U;                // camera block
  Eigen::VectorXd g_camera;
  std::vector<Mat3> V;              // per point
  std::vector<Vec3> g_point;
  std::vector<CamBlock> W;          // per observation, camera-local rows
  double max_gradient = 0.0;
};

NormalEquations build_normal_equations(const BaProblem& problem, const BaLayout& layout) {
  const double inv_wsum = 1.0 / weight_sum(problem);
  const Eigen::Index nc = static_cast<Eigen::Index>(layout.camera_dims());
  NormalEquations ne;
  ne.U = Eigen::MatrixXd::Zero(nc, nc);
  ne.g_camera = Eigen::VectorXd::Zero(nc);
  ne.V.assign(problem.points.size(), Mat3::Zero());
  ne.g_point.assign(problem.points.size(), Vec3::Zero());
  ne.W.assign(problem.observations.size(), CamBlock::Zero());

  for (std::size_t k = 0; k < problem.observations.size(); ++k) {
    const auto& o = problem.observations[k];
    if (o.weight == 0.0) continue;
    const auto lin = linearize_observation(problem.cameras[o.camera], layout.aspect(o.camera), layout.tie_focal(),
                                           problem.points[o.point], o.pixel);
    if (!lin.valid) fail(ErrorCode::DivergedPass, "point moved behind a camera");
    const double omega = inv_wsum * irls_weight(o.weight, lin.residual.norm(), problem.huber_delta);
    const Eigen::Matrix<double, kSlots, kSlots> JtJ = omega * lin.J_camera.transpose() * lin.J_camera;
    const Eigen::Matrix<double, kSlots, 1> gc = omega * lin.J_camera.transpose() * lin.residual;
    std::array<int, kSlots> idx{};
    for (int s = 0; s < kSlots; ++s) idx[static_cast<std::size_t>(s)] = layout.camera_slot(o.camera, s);
    for (int a = 0; a < kSlots; ++a) {
      const int ia = idx[static_cast<std::size_t>(a)];
      if (ia < 0) continue;
      ne.g_camera(ia) += gc(a);
      for (int b = 0; b < kSlots; ++b) {
        const int ib = idx[static_cast<std::size_t>(b)];
        if (ib >= 0) ne.U(ia, ib) += JtJ(a, b);
      }
    }
    if (layout.point_offset(o.point) >= 0) {
      ne.V[o.point] += omega * lin.J_point.transpose() * lin.J_point;
      ne.g_point[o.point] += omega * lin.J_point.transpose() * lin.residual;
      ne.W[k] = omega * lin.J_camera.transpose() * lin.J_point;
    }
  }
  ne.max_gradient = ne.g_camera.size() ? ne.g_camera.lpNorm<Eigen::Infinity>() : 0.0;
  for (const auto& g : ne.g_point) ne.max_gradient = std::max(ne.max_gradient, g.lpNorm<Eigen::Infinity>());
  return ne;
}

// Solves the Marquardt-damped system by eliminating the point blocks.
Eigen::VectorXd solve_damped(const BaProblem& problem, const BaLayout& layout, const NormalEquations& ne,
                             const std::vector<std::vector<std::size_t>>& by_point, double lambda) {
  const Eigen::Index nc = static_cast<Eigen::Index>(layout.camera_dims());
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.dims()));
  Eigen::MatrixXd S = ne.U;
  for (Eigen::Index i = 0; i < nc; ++i) S(i, i) += lambda * std::max(ne.U(i, i), 1e-12);
  Eigen::VectorXd rhs = -ne.g_camera;

  const bool points_free = !problem.points.empty() && layout.point_offset(0) >= 0;
  std::vector<Mat3> V_inv;
  if (points_free) {
    V_inv.resize(problem.points.size());
    for (std::size_t p = 0; p < problem.points.size(); ++p) {
      Mat3 V = ne.V[p];
      for (int i = 0; i < 3; ++i) V(i, i) += lambda * std::max(ne.V[p](i, i), 1e-12);
      V_inv[p] = V.inverse();
      if (nc == 0) continue;
      const auto& obs = by_point[p];
      std::vector<CamBlock> Y(obs.size());
      for (std::size_t a = 0; a < obs.size(); ++a) Y[a] = ne.W[obs[a]] * V_inv[p];
      for (std::size_t a = 0; a < obs.size(); ++a) {
        const std::size_t ca = problem.observations[obs[a]].camera;
        const Eigen::Matrix<double, kSlots, 1> ry = Y[a] * ne.g_point[p];
        for (int s = 0; s < kSlots; ++s) {
          const int ia = layout.camera_slot(ca, s);
          if (ia >= 0) rhs(ia) += ry(s);
        }
        for (std::size_t b = 0; b < obs.size(); ++b) {
          const std::size_t cb = problem.observations[obs[b]].camera;
          const Eigen::Matrix<double, kSlots, kSlots> blk = Y[a] * ne.W[obs[b]].transpose();
          for (int s = 0; s < kSlots; ++s) {
            const int ia = layout.camera_slot(ca, s);
            if (ia < 0) continue;
            for (int t = 0; t < kSlots; ++t) {
              const int ib = layout.camera_slot(cb, t);
              if (ib >= 0) S(ia, ib) -= blk(s, t);
            }
          }
        }
      }
    }
  }

  if (nc > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    if (ldlt.info() != Eigen::Success) return Eigen::VectorXd();
    delta.head(nc) = ldlt.solve(rhs);
    if (!delta.head(nc).allFinite()) return Eigen::VectorXd();
  }
  if (points_free) {
    for (std::size_t p = 0; p < problem.points.size(); ++p) {
      Vec3 r = -ne.g_point[p];
      for (std::size_t k : by_point[p]) {
        const std::size_t c = problem.observations[k].camera;
        for (int s = 0; s < kSlots; ++s) {
          const int ia = layout.camera_slot(c, s);
          if (ia >= 0) r -= ne.W[k].row(s).transpose() * delta(ia);
        }
      }
      delta.segment<3>(layout.point_offset(p)) = V_inv[p] * r;
    }
  }
  return delta;
}

BaPassReport run_pass(BaProblem& problem, const BaPassSpec& pass, const BaConfig& config, int pass_index) {
  const BaLayout layout(problem, pass, config);
  const auto by_point = observations_by_point(problem);
  BaPassReport report;
  report.pass = pass_index;
  double f = ba_objective(problem);
  if (!std::isfinite(f)) fail(ErrorCode::DivergedPass, "pass " + std::to_string(pass_index) + " starts non-finite");
  report.initial_objective = f;
  report.objective_trace.push_back(f);

  double lambda = 1e-4;
  for (int it = 0; it < config.max_iterations && layout.dims() > 0; ++it) {
    report.iterations = it + 1;
    if (f <= 1e-30) break;
    const NormalEquations ne = build_normal_equations(problem, layout);
    if (ne.max_gradient <= 1e-300) break;
    bool accepted = false;
    bool converged = false;
    for (int attempt = 0; attempt < 12; ++attempt) {
      const Eigen::VectorXd delta = solve_damped(problem, layout, ne, by_point, lambda);
      if (delta.size() == 0) {
        lambda *= 10.0;
        continue;
      }
      // A step that folds a lens over inside the image leaves the model's domain. Shortening it keeps
      // the Gauss-Newton direction, which raising lambda would turn toward the gradient.
      const auto lenses_valid = [&](const BaProblem& p) {
        return !pass.distortion || std::all_of(p.cameras.begin(), p.cameras.end(), [](const CameraModel& c) {
                 return distortion_injective(c.intrinsics, c.distortion);
               });
      };
      BaProblem candidate = layout.apply(problem, delta);
      bool valid = lenses_valid(candidate);
      for (double scale = 0.5; !valid && scale > 1e-3; scale *= 0.5) {
        candidate = layout.apply(problem, scale * delta);
        valid = lenses_valid(candidate);
      }
      const double fc = valid ? ba_objective(candidate) : std::numeric_limits<double>::infinity();
      if (std::isfinite(fc) && fc < f) {
        converged = (f - fc) <= config.function_tolerance * f;
        problem = std::move(candidate);
        f = fc;
        report.objective_trace.push_back(f);
        ++report.accepted_steps;
        lambda = std::max(lambda / 3.0, 1e-10);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted || converged) break;
  }
  if (f > report.initial_objective * (1.0 + config.divergence_tolerance)) {
    fail(ErrorCode::DivergedPass, "pass " + std::to_string(pass_index) + " increased the objective");
  }
  report.final_objective = f;
  report.rms_px = reprojection_rms(problem);
  return report;
}

}  // namespace

BaResult run_bundle_adjustment(BaProblem problem, const BaConfig& config) {
  problem.validate();
  if (config.passes.empty()) fail(ErrorCode::InvalidConfig, "no bundle adjustment passes configured");
  BaResult result;
  std::vector<double> focal_before(problem.cameras.size());
  double last_focal_change = 0.0;
  for (std::size_t p = 0; p < config.passes.size(); ++p) {
    bool retriangulated = false;
    if (config.passes[p].distortion && last_focal_change > config.retriangulate_focal_change) {
      const auto by_point = observations_by_point(problem);
      for (std::size_t q = 0; q < problem.points.size(); ++q) {
        if (const auto X = retriangulate(problem, by_point[q], q)) problem.points[q] = *X;
      }
      retriangulated = true;
    }
    for (std::size_t c = 0; c < problem.cameras.size(); ++c) focal_before[c] = problem.cameras[c].intrinsics.fx;
    BaPassReport report = run_pass(problem, config.passes[p], config, static_cast<int>(p) + 1);
    report.retriangulated_before = retriangulated;
    last_focal_change = 0.0;
    for (std::size_t c = 0; c < problem.cameras.size(); ++c) {
      last_focal_change = std::max(last_focal_change,
                                   std::abs(problem.cameras[c].intrinsics.fx / focal_before[c] - 1.0));
    }
    result.reports.push_back(std::move(report));
  }
  result.problem = std::move(problem);
  return result;
}

BaProblem select_ba_points(const DetectionTimeline& timeline, const std::vector<CameraModel>& cameras,
                           double kappa, std::size_t budget, std::uint64_t seed, double huber_delta) {
  if (cameras.size() != timeline.cameras.size()) {
    fail(ErrorCode::DimensionMismatch, "camera list does not match the timeline");
  }
  struct Candidate {
    std::size_t group;
    int person;
    std::size_t keypoint;
  };
  const auto keypoint_at = [&](const FrameGroup& g, std::size_t c, int person,
                               std::size_t k) -> const Keypoint2D* {
    if (!g.members[c]) return nullptr;
    const auto& persons = timeline.cameras[c].frames[*g.members[c]].persons;
    const auto it = persons.find(person);
    if (it == persons.end() || k >= it->second.size()) return nullptr;
    return &it->second[k];
  };

  std::vector<Candidate> pool;
  for (std::size_t gi = 0; gi < timeline.groups.size(); ++gi) {
    const FrameGroup& g = timeline.groups[gi];
    std::set<int> persons;
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      if (!g.members[c]) continue;
      for (const auto& [pid, kps] : timeline.cameras[c].frames[*g.members[c]].persons) persons.insert(pid);
    }
    for (int pid : persons) {
      for (std::size_t k = 0; k < timeline.n_keypoints; ++k) {
        int confident = 0;
        for (std::size_t c = 0; c < cameras.size(); ++c) {
          const Keypoint2D* kp = keypoint_at(g, c, pid, k);
          if (kp && kp->confidence > kappa) ++confident;
        }
        if (confident >= 2) pool.push_back({gi, pid, k});
      }
    }
  }
  if (pool.empty()) fail(ErrorCode::NoTriangulablePoints, "no keypoint is confidently seen in two views");

  BaProblem problem;
  problem.cameras = cameras;
  problem.huber_delta = huber_delta;
  for (std::size_t idx : sample_indices(pool.size(), budget, seed)) {
    const Candidate& cand = pool[idx];
    const FrameGroup& g = timeline.groups[cand.group];
    std::vector<WeightedObservation> views;
    std::vector<BaObservation> obs;
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      const Keypoint2D* kp = keypoint_at(g, c, cand.person, cand.keypoint);
      if (!kp || !(kp->confidence > kappa)) continue;
      views.push_back({c, undistort_pixel(kp->position, cameras[c].intrinsics, cameras[c].distortion),
                       kp->confidence});
      obs.push_back({c, 0, kp->position, kp->confidence});
    }
    Vec3 X;
    try {
      X = triangulate_weighted_dlt(views, cameras);
    } catch (const Error&) {
      continue;
    }
    std::erase_if(obs, [&](const BaObservation& o) { return !(cameras[o.camera].pose.apply(X).z() > 0); });
    if (obs.size() < 2) continue;
    const std::size_t point = problem.points.size();
    problem.points.push_back(X);
    for (auto& o : obs) {
      o.point = point;
      problem.observations.push_back(o);
    }
  }
  if (problem.points.empty()) fail(ErrorCode::NoTriangulablePoints, "every sampled keypoint failed to triangulate");
  return problem;
}

nlohmann::json pass_reports_json(const std::vector<BaPassReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    out.push_back({{"pass", r.pass},
                   {"iterations", r.iterations},
                   {"accepted_steps", r.accepted_steps},
                   {"initial_objective", r.initial_objective},
                   {"final_objective", r.final_objective},
                   {"rms_px", r.rms_px},
                   {"retriangulated_before", r.retriangulated_before}});
  }
  return out;
}

}  // namespace polycap

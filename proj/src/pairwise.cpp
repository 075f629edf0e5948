#include "polycap/pairwise.hpp"

#include "polycap/error.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace polycap {

namespace {

struct Residual {
  double value = 0.0;  // signed, squares to the Sampson distance
  bool valid = false;
};

Residual sampson_residual(const Mat3& E, const Vec2& a, const Vec2& b) {
  const Vec3 xa(a.x(), a.y(), 1.0);
  const Vec3 xb(b.x(), b.y(), 1.0);
  const Vec3 Ea = E * xa;
  const Vec3 Etb = E.transpose() * xb;
  const double den = Ea.x() * Ea.x() + Ea.y() * Ea.y() + Etb.x() * Etb.x() + Etb.y() * Etb.y();
  if (!(den > 0.0)) return {};
  return {xb.dot(Ea) / std::sqrt(den), true};
}

double sampson_or_inf(const Mat3& E, const Vec2& a, const Vec2& b) {
  const Residual r = sampson_residual(E, a, b);
  return r.valid ? r.value * r.value : std::numeric_limits<double>::infinity();
}

std::vector<std::size_t> inlier_set(const Mat3& E, std::span<const Vec2> xi, std::span<const Vec2> xj,
                                    double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < xi.size(); ++k) {
    if (sampson_or_inf(E, xi[k], xj[k]) < threshold) out.push_back(k);
  }
  return out;
}

std::size_t cheirality_count(const RelativeMotion& m, std::span<const Vec2> xi, std::span<const Vec2> xj,
                             std::span<const std::size_t> subset) {
  std::size_t n = 0;
  for (std::size_t k : subset) {
    const Eigen::Vector2d d = two_view_depths(m, xi[k], xj[k]);
    if (d(0) > 0.0 && d(1) > 0.0) ++n;
  }
  return n;
}

Vec3 orthogonal_unit(const Vec3& t) {
  const Vec3 seed = std::abs(t.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return t.cross(seed).normalized();
}

// Levenberg-Marquardt on (R, t) minimizing the summed Sampson distance.
RelativeMotion refine_motion(RelativeMotion m, std::span<const Vec2> xi, std::span<const Vec2> xj,
                             std::span<const std::size_t> subset, int iterations) {
  if (subset.size() < 6 || iterations <= 0) return m;
  using Vec5 = Eigen::Matrix<double, 5, 1>;
  using Mat5 = Eigen::Matrix<double, 5, 5>;

  const auto perturb = [](const RelativeMotion& base, const Vec3& b1, const Vec3& b2, const Vec5& d) {
    RelativeMotion out;
    out.R = quat_from_rotation_vector(d.head<3>()).toRotationMatrix() * base.R;
    out.t = (base.t + d(3) * b1 + d(4) * b2).normalized();
    return out;
  };
  const auto residuals = [&](const RelativeMotion& mm) {
    const Mat3 E = essential_from_motion(mm.R, mm.t);
    Eigen::VectorXd r(static_cast<Eigen::Index>(subset.size()));
    for (std::size_t k = 0; k < subset.size(); ++k) {
      r(static_cast<Eigen::Index>(k)) = sampson_residual(E, xi[subset[k]], xj[subset[k]]).value;
    }
    return r;
  };

  Eigen::VectorXd r = residuals(m);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  for (int it = 0; it < iterations; ++it) {
    const Vec3 b1 = orthogonal_unit(m.t);
    const Vec3 b2 = m.t.cross(b1);
    Eigen::MatrixXd J(r.size(), 5);
    constexpr double h = 1e-7;
    for (int p = 0; p < 5; ++p) {
      Vec5 d = Vec5::Zero();
      d(p) = h;
      const Eigen::VectorXd rp = residuals(perturb(m, b1, b2, d));
      d(p) = -h;
      const Eigen::VectorXd rm = residuals(perturb(m, b1, b2, d));
      J.col(p) = (rp - rm) / (2 * h);
    }
    const Mat5 JtJ = J.transpose() * J;
    const Vec5 g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < 1e-18) break;
    bool accepted = false;
    for (int attempt = 0; attempt < 10; ++attempt) {
      Mat5 A = JtJ;
      A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
      const Vec5 step = A.ldlt().solve(-g);
      const RelativeMotion cand = perturb(m, b1, b2, step);
      const Eigen::VectorXd rc = residuals(cand);
      const double c = rc.squaredNorm();
      if (c < cost) {
        const double gain = cost - c;
        m = cand;
        r = rc;
        cost = c;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (gain < 1e-14 * std::max(cost, 1e-30)) it = iterations;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
  }
  Eigen::JacobiSVD<Mat3> svd(m.R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  m.R = svd.matrixU() * svd.matrixV().transpose();
  return m;
}

// Chooses the factorization of E that places most of `subset` in front of both cameras.
RelativeMotion choose_by_cheirality(const Mat3& E, std::span<const Vec2> xi, std::span<const Vec2> xj,
                                    std::span<const std::size_t> subset, std::size_t* count) {
  const auto candidates = decompose_essential(E);
  std::size_t best = 0;
  std::size_t best_count = 0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const std::size_t n = cheirality_count(candidates[c], xi, xj, subset);
    if (n > best_count) {
      best_count = n;
      best = c;
    }
  }
  *count = best_count;
  return candidates[best];
}

}  // namespace

double sampson_distance(const Mat3& E, const Vec2& x_i, const Vec2& x_j) {
  const Residual r = sampson_residual(E, x_i, x_j);
  if (!r.valid) fail(ErrorCode::ZeroDenominator, "Sampson denominator vanishes");
  return r.value * r.value;
}

PairCalibration refine_from_essential(const Mat3& E_in, std::span<const Vec2> xi, std::span<const Vec2> xj,
                                      const RansacConfig& cfg) {
  const Mat3 E0 = E_in / E_in.norm();
  PairCalibration out;
  out.n_correspondences = xi.size();

  std::vector<std::size_t> inliers = inlier_set(E0, xi, xj, cfg.inlier_threshold);
  if (inliers.empty()) fail(ErrorCode::LowInlierRatio, "no correspondence satisfies the inlier threshold");

  std::size_t front = 0;
  RelativeMotion motion = choose_by_cheirality(E0, xi, xj, inliers, &front);
  if (2 * front <= inliers.size()) {
    fail(ErrorCode::DegenerateConfiguration, "no pose candidate passes cheirality for the inlier majority");
  }

  // Refit and re-classify until the inlier set settles.
  for (int round = 0; round < 3; ++round) {
    motion = refine_motion(motion, xi, xj, inliers, cfg.refine_iterations);
    auto next = inlier_set(essential_from_motion(motion.R, motion.t), xi, xj, cfg.inlier_threshold);
    if (next.empty()) break;
    const bool same = next == inliers;
    inliers = std::move(next);
    if (same) break;
  }

  out.E = essential_from_motion(motion.R, motion.t);
  out.E /= out.E.norm();
  inliers = inlier_set(out.E, xi, xj, cfg.inlier_threshold);
  if (inliers.empty()) fail(ErrorCode::LowInlierRatio, "refined model has no inliers");
  front = cheirality_count(motion, xi, xj, inliers);
  if (2 * front <= inliers.size()) {
    fail(ErrorCode::DegenerateConfiguration, "refined pose fails cheirality for the inlier majority");
  }

  out.rotation = Quat(motion.R).normalized();
  out.translation_dir = motion.t.normalized();
  out.cheirality_fraction = static_cast<double>(front) / static_cast<double>(inliers.size());
  double sum = 0.0;
  for (std::size_t k : inliers) sum += sampson_or_inf(out.E, xi[k], xj[k]);
  out.score = sum / static_cast<double>(inliers.size());
  out.inliers = std::move(inliers);

  const double ratio = static_cast<double>(out.inliers.size()) / static_cast<double>(xi.size());
  if (ratio < cfg.min_inlier_ratio) {
    fail(ErrorCode::LowInlierRatio, "inlier ratio " + std::to_string(ratio) + " below floor");
  }
  return out;
}

PairCalibration estimate_relative_pose_normalized(std::span<const Vec2> xi, std::span<const Vec2> xj,
                                                  const RansacConfig& cfg) {
  const std::size_t n = xi.size();
  if (xj.size() != n) fail(ErrorCode::DimensionMismatch, "correspondence arrays differ in length");
  if (n < 5) fail(ErrorCode::NotEnoughCorrespondences, std::to_string(n) + " correspondences, need 5");
  if (cfg.iterations <= 0 || !(cfg.inlier_threshold > 0)) fail(ErrorCode::InvalidConfig, "bad RANSAC config");

  // Samples are fixed up front so hypothesis order never depends on scheduling.
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::array<std::size_t, 5>> samples(static_cast<std::size_t>(cfg.iterations));
  for (auto& s : samples) {
    for (std::size_t a = 0; a < 5; ++a) {
      for (;;) {
        const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        if (std::find(s.begin(), s.begin() + static_cast<long>(a), pick) == s.begin() + static_cast<long>(a)) {
          s[a] = pick;
          break;
        }
      }
    }
  }

  Mat3 best_E = Mat3::Zero();
  double best_cost = std::numeric_limits<double>::infinity();
  std::array<Vec2, 5> a{}, b{};
  for (const auto& s : samples) {
    for (std::size_t q = 0; q < 5; ++q) {
      a[q] = xi[s[q]];
      b[q] = xj[s[q]];
    }
    for (const Mat3& E : solve_five_point(a, b)) {
      // Truncated quadratic (MSAC) cost.
      double cost = 0.0;
      for (std::size_t k = 0; k < n && cost < best_cost; ++k) {
        cost += std::min(sampson_or_inf(E, xi[k], xj[k]), cfg.inlier_threshold);
      }
      if (cost < best_cost) {
        best_cost = cost;
        best_E = E;
      }
    }
  }

  bool fallback = false;
  if (!std::isfinite(best_cost)) {
    if (n < 8) fail(ErrorCode::DegenerateConfiguration, "five-point solver found no real root");
    best_E = solve_eight_point(xi, xj);
    fallback = true;
  }
  PairCalibration out = refine_from_essential(best_E, xi, xj, cfg);
  out.eight_point_fallback = fallback;
  return out;
}

PairCalibration estimate_relative_pose(std::span<const Correspondence> corrs, const Intrinsics& K_i,
                                       const Intrinsics& K_j, const RansacConfig& cfg) {
  if (corrs.size() < 5) {
    fail(ErrorCode::NotEnoughCorrespondences, std::to_string(corrs.size()) + " correspondences, need 5");
  }
  std::vector<Vec2> xi, xj;
  xi.reserve(corrs.size());
  xj.reserve(corrs.size());
  for (const auto& c : corrs) {
    xi.push_back(K_i.to_normalized(c.pixel_i));
    xj.push_back(K_j.to_normalized(c.pixel_j));
  }
  PairCalibration out = estimate_relative_pose_normalized(xi, xj, cfg);
  out.cam_i = corrs.front().cam_i;
  out.cam_j = corrs.front().cam_j;
  return out;
}

nlohmann::json pair_diagnostics(const PairCalibration& pair, const std::vector<std::string>& camera_ids) {
  nlohmann::json e = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) e.push_back(pair.E(r, c));
  }
  return {{"cam_i", camera_ids.at(pair.cam_i)},
          {"cam_j", camera_ids.at(pair.cam_j)},
          {"inlier_count", pair.inliers.size()},
          {"n_correspondences", pair.n_correspondences},
          {"s_ij", pair.score},
          {"E", e},
          {"eight_point_fallback", pair.eight_point_fallback}};
}

}  // namespace polycap

#include "fixtures.hpp"

#include "polycap/error.hpp"
#include "polycap/five_point.hpp"
#include "polycap/pairwise.hpp"

#include <doctest.h>

using namespace polycap;

namespace {

struct NormalizedPair {
  std::vector<Vec2> x1, x2;
  Mat3 E;
};

NormalizedPair exact_pair(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  const Mat3 R = fixtures::random_rotation(rng, 0.5);
  const Vec3 t = fixtures::random_unit(rng);
  NormalizedPair p;
  p.E = essential_from_motion(R, t);
  p.E /= p.E.norm();
  while (p.x1.size() < n) {
    const Vec3 X(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(4, 8));
    const Vec3 Y = R * X + t;
    if (Y.z() <= 0) continue;
    p.x1.emplace_back(X.x() / X.z(), X.y() / X.z());
    p.x2.emplace_back(Y.x() / Y.z(), Y.y() / Y.z());
  }
  return p;
}

double sign_free_distance(const Mat3& a, const Mat3& b) { return std::min((a - b).norm(), (a + b).norm()); }

}  // namespace

TEST_CASE("five-point roots include the true essential matrix") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto p = exact_pair(seed, 5);
    const auto Es = solve_five_point(p.x1, p.x2);
    REQUIRE_FALSE(Es.empty());
    CHECK(Es.size() <= 10);
    double best = 1e9;
    for (const Mat3& E : Es) {
      CHECK(E.norm() == doctest::Approx(1.0).epsilon(1e-9));
      for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(p.x2[k].homogeneous().dot(E * p.x1[k].homogeneous())) < 1e-9);
      const Eigen::Vector3d s = Eigen::JacobiSVD<Mat3>(E).singularValues();
      CHECK(std::abs(s(0) - s(1)) < 1e-6);
      CHECK(std::abs(s(2)) < 1e-6);
      best = std::min(best, sign_free_distance(E, p.E));
    }
    CHECK(best < 1e-6);
  }
}

TEST_CASE("eight-point solver is exact on clean data") {
  const auto p = exact_pair(77, 30);
  CHECK(sign_free_distance(solve_eight_point(p.x1, p.x2), p.E) < 1e-8);
}

TEST_CASE("decomposition yields the generating motion") {
  Rng rng(4);
  const Mat3 R = fixtures::random_rotation(rng);
  const Vec3 t = fixtures::random_unit(rng);
  const auto cands = decompose_essential(essential_from_motion(R, t));
  int hits = 0;
  for (const auto& m : cands) {
    CHECK(std::abs(m.R.determinant() - 1.0) < 1e-12);
    if ((m.R - R).norm() < 1e-9 && (m.t - t).norm() < 1e-9) ++hits;
  }
  CHECK(hits == 1);
}

TEST_CASE("Sampson distance is scale-invariant and zero on the constraint") {
  const auto p = exact_pair(9, 10);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(sampson_distance(p.E, p.x1[k], p.x2[k]) < 1e-20);
    const Vec2 off = p.x2[k] + Vec2(1e-3, -2e-3);
    CHECK(sampson_distance(p.E, p.x1[k], off) == doctest::Approx(sampson_distance(7.0 * p.E, p.x1[k], off)));
  }
  CHECK_THROWS_AS(sampson_distance(Mat3::Zero(), Vec2(0, 0), Vec2(0, 0)), Error);
}

TEST_CASE("exact correspondences: 30 degrees about y, baseline along x") {
  const auto c = fixtures::two_view_case(1, 200, 0.0, 0.0, fixtures::rot_y(30), Vec3::UnitX());
  RansacConfig cfg;
  cfg.seed = 5;
  const PairCalibration pc = estimate_relative_pose(c.corrs, c.K, c.K, cfg);
  CHECK(rotation_angle_between(pc.rotation, Quat(c.R)) < 1e-4);
  CHECK(std::acos(std::min(1.0, pc.translation_dir.dot(Vec3::UnitX()))) < 1e-4);
  CHECK(pc.score < 1e-12);
  CHECK(pc.inliers.size() == 200);
}

TEST_CASE("gross outliers are rejected") {
  const auto c = fixtures::two_view_case(2, 200, 0.5, 0.3, fixtures::rot_y(30), Vec3::UnitX());
  RansacConfig cfg;
  cfg.seed = 6;
  const PairCalibration pc = estimate_relative_pose(c.corrs, c.K, c.K, cfg);
  for (std::size_t i : pc.inliers) CHECK_FALSE(c.outlier[i]);
  CHECK(fixtures::rotation_error_deg(pc.R(), c.R) < 0.1);
  CHECK(fixtures::angle_deg(pc.translation_dir, Vec3::UnitX()) < 0.5);
  CHECK(pc.cheirality_fraction > 0.5);
}

TEST_CASE("refinement is invariant to the scale of E") {
  const auto c = fixtures::two_view_case(3, 100, 0.3, 0.0, fixtures::rot_y(20), Vec3(1, 0.2, 0));
  std::vector<Vec2> xi, xj;
  for (const auto& k : c.corrs) {
    xi.push_back(c.K.to_normalized(k.pixel_i));
    xj.push_back(c.K.to_normalized(k.pixel_j));
  }
  const Mat3 E = essential_from_motion(c.R, c.t);
  const auto a = refine_from_essential(E, xi, xj, RansacConfig{});
  const auto b = refine_from_essential(-3.5 * E, xi, xj, RansacConfig{});
  CHECK(rotation_angle_between(a.rotation, b.rotation) < 1e-12);
  CHECK((a.translation_dir - b.translation_dir).norm() < 1e-12);
  CHECK(a.inliers == b.inliers);
}

TEST_CASE("too few correspondences or too many outliers fail loudly") {
  const auto c = fixtures::two_view_case(4, 4, 0.0, 0.0, fixtures::rot_y(10), Vec3::UnitX());
  try {
    estimate_relative_pose(c.corrs, c.K, c.K, RansacConfig{});
    FAIL("expected NotEnoughCorrespondences");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotEnoughCorrespondences);
  }
  const auto noise = fixtures::two_view_case(5, 200, 0.0, 0.95, fixtures::rot_y(10), Vec3::UnitX());
  try {
    estimate_relative_pose(noise.corrs, noise.K, noise.K, RansacConfig{});
    FAIL("expected LowInlierRatio");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LowInlierRatio);
  }
}

TEST_CASE("RANSAC is deterministic for a seed") {
  const auto c = fixtures::two_view_case(8, 150, 0.5, 0.3, fixtures::rot_y(-25), Vec3(1, 0, 0.3));
  RansacConfig cfg;
  cfg.seed = 99;
  const auto a = estimate_relative_pose(c.corrs, c.K, c.K, cfg);
  const auto b = estimate_relative_pose(c.corrs, c.K, c.K, cfg);
  CHECK(a.E == b.E);
  CHECK(a.inliers == b.inliers);
}

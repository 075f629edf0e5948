#pragma once

#include "polycap/camgeom.hpp"

#include <array>
#include <span>
#include <vector>

namespace polycap {

/// Essential matrices consistent with five normalized correspondences,
/// x2^T E x1 = 0. Gröbner-basis formulation with a 10x10 action matrix;
/// returns every real root (at most ten), each scaled to unit Frobenius norm.
std::vector<Mat3> solve_five_point(std::span<const Vec2> x1, std::span<const Vec2> x2);

/// Linear least-squares estimate from >= 8 correspondences, projected onto the
/// essential manifold (singular values 1, 1, 0).
Mat3 solve_eight_point(std::span<const Vec2> x1, std::span<const Vec2> x2);

Mat3 project_to_essential(const Mat3& E);

/// Relative motion X2 = R X1 + t with unit t.
struct RelativeMotion {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::UnitX();
};

/// The four (R, t) factorizations of E = [t]x R.
std::array<RelativeMotion, 4> decompose_essential(const Mat3& E);

/// Depths (d1, d2) of the two-view intersection d2 x2 = d1 R x1 + t (least squares).
Eigen::Vector2d two_view_depths(const RelativeMotion& motion, const Vec2& x1, const Vec2& x2);

inline Mat3 essential_from_motion(const Mat3& R, const Vec3& t) { return skew(t) * R; }

}  // namespace polycap

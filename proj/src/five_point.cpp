#include "polycap/five_point.hpp"

#include "polycap/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>

namespace polycap {

namespace {

// Monomials in x, y, z up to degree three, cubics first (graded order).
constexpr std::array<std::array<int, 3>, 20> kMonomials = {{
    {3, 0, 0}, {2, 1, 0}, {2, 0, 1}, {1, 2, 0}, {1, 1, 1}, {1, 0, 2}, {0, 3, 0}, {0, 2, 1}, {0, 1, 2}, {0, 0, 3},
    {2, 0, 0}, {1, 1, 0}, {1, 0, 1}, {0, 2, 0}, {0, 1, 1}, {0, 0, 2}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0},
}};

struct MonomialTable {
  std::array<std::array<int, 20>, 20> product{};  // -1 when the degree exceeds three
  MonomialTable() {
    for (int i = 0; i < 20; ++i) {
      for (int j = 0; j < 20; ++j) {
        const int a = kMonomials[i][0] + kMonomials[j][0];
        const int b = kMonomials[i][1] + kMonomials[j][1];
        const int c = kMonomials[i][2] + kMonomials[j][2];
        product[i][j] = -1;
        for (int k = 0; k < 20; ++k) {
          if (kMonomials[k][0] == a && kMonomials[k][1] == b && kMonomials[k][2] == c) product[i][j] = k;
        }
      }
    }
  }
};

const MonomialTable& table() {
  static const MonomialTable t;
  return t;
}

struct Poly {
  std::array<double, 20> c{};

  Poly& operator+=(const Poly& o) {
    for (int i = 0; i < 20; ++i) c[i] += o.c[i];
    return *this;
  }
  friend Poly operator+(Poly a, const Poly& b) { return a += b; }
  friend Poly operator-(Poly a, const Poly& b) {
    for (int i = 0; i < 20; ++i) a.c[i] -= b.c[i];
    return a;
  }
  friend Poly operator*(double s, Poly a) {
    for (double& v : a.c) v *= s;
    return a;
  }
  friend Poly operator*(const Poly& a, const Poly& b) {
    const auto& t = table();
    Poly r;
    for (int i = 0; i < 20; ++i) {
      if (a.c[i] == 0.0) continue;
      for (int j = 0; j < 20; ++j) {
        if (b.c[j] == 0.0) continue;
        const int k = t.product[i][j];
        if (k >= 0) r.c[k] += a.c[i] * b.c[j];
      }
    }
    return r;
  }
};

constexpr int kX = 16, kY = 17, kZ = 18, kOne = 19;

}  // namespace

std::vector<Mat3> solve_five_point(std::span<const Vec2> x1, std::span<const Vec2> x2) {
  if (x1.size() != 5 || x2.size() != 5) fail(ErrorCode::NotEnoughCorrespondences, "five-point needs 5 pairs");

  // Epipolar constraints on the row-major entries of E.
  Eigen::Matrix<double, 5, 9> A;
  for (int i = 0; i < 5; ++i) {
    const Vec3 p(x1[i].x(), x1[i].y(), 1.0);
    const Vec3 q(x2[i].x(), x2[i].y(), 1.0);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) A(i, 3 * r + c) = q(r) * p(c);
    }
  }
  // Null space of A from the full QR of A^T.
  Eigen::HouseholderQR<Eigen::Matrix<double, 9, 5>> qr(A.transpose());
  const Eigen::Matrix<double, 9, 9> Q = qr.householderQ();
  const Eigen::Matrix<double, 9, 4> basis = Q.rightCols<4>();

  // E = x X + y Y + z Z + W
  std::array<Poly, 9> e;
  for (int k = 0; k < 9; ++k) {
    e[k].c[kX] = basis(k, 0);
    e[k].c[kY] = basis(k, 1);
    e[k].c[kZ] = basis(k, 2);
    e[k].c[kOne] = basis(k, 3);
  }
  const auto E = [&](int r, int c) -> const Poly& { return e[3 * r + c]; };

  std::array<Poly, 10> constraints;
  constraints[0] = E(0, 0) * (E(1, 1) * E(2, 2) - E(1, 2) * E(2, 1)) -
                   E(0, 1) * (E(1, 0) * E(2, 2) - E(1, 2) * E(2, 0)) +
                   E(0, 2) * (E(1, 0) * E(2, 1) - E(1, 1) * E(2, 0));

  // 2 E E^T E - tr(E E^T) E = 0
  Poly eet[3][3];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) eet[r][c] = E(r, 0) * E(c, 0) + E(r, 1) * E(c, 1) + E(r, 2) * E(c, 2);
  }
  const Poly trace = eet[0][0] + eet[1][1] + eet[2][2];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      Poly p = 2.0 * (eet[r][0] * E(0, c) + eet[r][1] * E(1, c) + eet[r][2] * E(2, c));
      constraints[1 + 3 * r + c] = p - trace * E(r, c);
    }
  }

  Eigen::Matrix<double, 10, 20> M;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 20; ++j) M(i, j) = constraints[i].c[j];
  }
  Eigen::PartialPivLU<Eigen::Matrix<double, 10, 10>> lu(M.leftCols<10>());
  if (!(std::abs(lu.determinant()) > 1e-300)) return {};
  const Eigen::Matrix<double, 10, 10> G = lu.solve(M.rightCols<10>());

  // Multiplication by x on the basis [x^2, xy, xz, y^2, yz, z^2, x, y, z, 1].
  Eigen::Matrix<double, 10, 10> action = Eigen::Matrix<double, 10, 10>::Zero();
  action.topRows<6>() = -G.topRows<6>();
  action(6, 0) = 1.0;
  action(7, 1) = 1.0;
  action(8, 2) = 1.0;
  action(9, 6) = 1.0;

  Eigen::EigenSolver<Eigen::Matrix<double, 10, 10>> eig(action);
  if (eig.info() != Eigen::Success) return {};
  const auto values = eig.eigenvalues();
  const auto vectors = eig.eigenvectors();

  std::vector<Mat3> solutions;
  for (int s = 0; s < 10; ++s) {
    if (std::abs(values(s).imag()) > 1e-8 * std::max(1.0, std::abs(values(s).real()))) continue;
    const auto v = vectors.col(s);
    const std::complex<double> w = v(9);
    if (std::abs(w) < 1e-12) continue;
    const double x = (v(6) / w).real();
    const double y = (v(7) / w).real();
    const double z = (v(8) / w).real();
    Eigen::Matrix<double, 9, 1> ev = x * basis.col(0) + y * basis.col(1) + z * basis.col(2) + basis.col(3);
    Mat3 Es;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) Es(r, c) = ev(3 * r + c);
    }
    const double n = Es.norm();
    if (!(n > 0) || !std::isfinite(n)) continue;
    solutions.push_back(Es / n);
  }
  return solutions;
}

Mat3 project_to_essential(const Mat3& E) {
  Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d(1.0, 1.0, 0.0);
  Mat3 out = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  return out / out.norm();
}

Mat3 solve_eight_point(std::span<const Vec2> x1, std::span<const Vec2> x2) {
  const std::size_t n = x1.size();
  if (n < 8 || x2.size() != n) fail(ErrorCode::NotEnoughCorrespondences, "eight-point needs >= 8 pairs");

  const auto conditioner = [](std::span<const Vec2> pts) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double spread = 0.0;
    for (const auto& p : pts) spread += (p - mean).norm();
    spread /= static_cast<double>(pts.size());
    const double s = spread > 0 ? std::sqrt(2.0) / spread : 1.0;
    Mat3 T;
    T << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
    return T;
  };
  const Mat3 T1 = conditioner(x1);
  const Mat3 T2 = conditioner(x2);

  Eigen::MatrixXd A(n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = T1 * Vec3(x1[i].x(), x1[i].y(), 1.0);
    const Vec3 q = T2 * Vec3(x2[i].x(), x2[i].y(), 1.0);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) A(static_cast<Eigen::Index>(i), 3 * r + c) = q(r) * p(c);
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Mat3 En;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) En(r, c) = v(3 * r + c);
  }
  return project_to_essential(T2.transpose() * En * T1);
}

std::array<RelativeMotion, 4> decompose_essential(const Mat3& E) {
  Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  if (U.determinant() < 0) U = -U;
  if (V.determinant() < 0) V = -V;
  Mat3 W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 R1 = U * W * V.transpose();
  const Mat3 R2 = U * W.transpose() * V.transpose();
  const Vec3 t = U.col(2).normalized();
  return {RelativeMotion{R1, t}, RelativeMotion{R1, -t}, RelativeMotion{R2, t}, RelativeMotion{R2, -t}};
}

Eigen::Vector2d two_view_depths(const RelativeMotion& motion, const Vec2& x1, const Vec2& x2) {
  Eigen::Matrix<double, 3, 2> A;
  A.col(0) = motion.R * Vec3(x1.x(), x1.y(), 1.0);
  A.col(1) = -Vec3(x2.x(), x2.y(), 1.0);
  // d1 * R x1 - d2 * x2 = -t
  return (A.transpose() * A).ldlt().solve(-A.transpose() * motion.t);
}

}  // namespace polycap

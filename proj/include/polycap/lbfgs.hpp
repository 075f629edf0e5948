#pragma once

#include <Eigen/Core>

#include <cmath>
#include <deque>
#include <limits>

namespace polycap {

struct LbfgsOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-10;  // infinity norm
  int history = 8;
  int max_backtracks = 60;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;  // gradient tolerance met
};

/// Limited-memory BFGS with Armijo backtracking. `f(x, grad)` returns the
/// objective and writes the gradient. Only decreasing steps are accepted, so
/// the returned value never exceeds f(x0).
template <class Objective>
LbfgsResult minimize_lbfgs(Objective&& f, Eigen::VectorXd x0, const LbfgsOptions& opts = {}) {
  using Eigen::VectorXd;
  LbfgsResult out;
  out.x = std::move(x0);
  VectorXd g(out.x.size());
  out.value = f(out.x, g);
  std::deque<VectorXd> S, Y;
  std::deque<double> rho;

  for (int it = 0; it < opts.max_iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
      out.converged = true;
      break;
    }
    // Two-loop recursion.
    VectorXd q = g;
    std::vector<double> alpha(S.size());
    for (int k = static_cast<int>(S.size()) - 1; k >= 0; --k) {
      alpha[k] = rho[k] * S[k].dot(q);
      q -= alpha[k] * Y[k];
    }
    if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double beta = rho[k] * Y[k].dot(q);
      q += S[k] * (alpha[k] - beta);
    }
    VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0)) {
      dir = -g;
      slope = -g.squaredNorm();
      S.clear();
      Y.clear();
      rho.clear();
    }

    double step = 1.0;
    if (S.empty()) step = std::min(1.0, 1.0 / std::max(g.lpNorm<Eigen::Infinity>(), 1e-300));
    VectorXd x_new, g_new(g.size());
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int b = 0; b < opts.max_backtracks; ++b) {
      x_new = out.x + step * dir;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= out.value + 1e-4 * step * slope && f_new < out.value) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) break;

    VectorXd s = x_new - out.x;
    VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-300) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opts.history) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    out.x = std::move(x_new);
    out.value = f_new;
    g = g_new;
  }
  if (g.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) out.converged = true;
  return out;
}

}  // namespace polycap

#include "polycap/scalegraph.hpp"

#include "polycap/error.hpp"
#include "polycap/lbfgs.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <tuple>

namespace polycap {

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

std::pair<std::size_t, std::size_t> key(std::size_t i, std::size_t j) { return {std::min(i, j), std::max(i, j)}; }

// Rotation and translation direction of an edge walked from node `from`.
std::pair<Mat3, Vec3> directed(const PairCalibration& e, std::size_t from) {
  const Mat3 R = e.R();
  if (from == e.cam_i) return {R, e.translation_dir};
  return {R.transpose(), -(R.transpose() * e.translation_dir)};
}

}  // namespace

void CalibrationGraph::validate() const {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    if (e.cam_i >= nodes.size() || e.cam_j >= nodes.size()) {
      fail(ErrorCode::InvalidConfig, "edge references an unknown camera");
    }
    if (e.cam_i == e.cam_j) fail(ErrorCode::InvalidConfig, "self-loop on camera " + nodes[e.cam_i]);
    if (!seen.emplace(key(e.cam_i, e.cam_j), k).second) {
      fail(ErrorCode::InvalidConfig, "duplicate edge " + nodes[e.cam_i] + "-" + nodes[e.cam_j]);
    }
  }
}

std::vector<std::vector<std::size_t>> CalibrationGraph::components() const {
  DisjointSets sets(nodes.size());
  for (const auto& e : edges) sets.unite(e.cam_i, e.cam_j);
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t n = 0; n < nodes.size(); ++n) groups[sets.find(n)].push_back(n);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  return out;
}

void CalibrationGraph::require_connected() const {
  validate();
  if (nodes.empty()) fail(ErrorCode::DisconnectedGraph, "graph has no cameras");
  const auto comps = components();
  if (comps.size() == 1) return;
  std::string msg = "camera graph has " + std::to_string(comps.size()) + " components:";
  for (const auto& c : comps) {
    msg += " {";
    for (std::size_t k = 0; k < c.size(); ++k) msg += (k ? "," : "") + nodes[c[k]];
    msg += "}";
  }
  fail(ErrorCode::DisconnectedGraph, msg);
}

LoopSystem build_loop_system(const CalibrationGraph& graph) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  for (std::size_t k = 0; k < graph.edges.size(); ++k) index[key(graph.edges[k].cam_i, graph.edges[k].cam_j)] = k;
  const auto find = [&](std::size_t i, std::size_t j) -> std::optional<std::size_t> {
    const auto it = index.find(key(i, j));
    if (it == index.end()) return std::nullopt;
    return it->second;
  };

  LoopSystem sys;
  const std::size_t n = graph.nodes.size();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const auto ab = find(a, b);
      if (!ab) continue;
      for (std::size_t c = b + 1; c < n; ++c) {
        const auto bc = find(b, c);
        const auto ca = find(c, a);
        if (!bc || !ca) continue;
        const double s = std::cbrt(graph.edges[*ab].score * graph.edges[*bc].score * graph.edges[*ca].score);
        sys.cycles.push_back({a, b, c, {*ab, *bc, *ca}, 1.0 / (s + kLoopWeightEpsilon)});
      }
    }
  }

  sys.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(3 * sys.cycles.size()),
                                static_cast<Eigen::Index>(graph.edges.size()));
  sys.row_weights.resize(sys.A.rows());
  for (std::size_t l = 0; l < sys.cycles.size(); ++l) {
    const LoopCycle& cy = sys.cycles[l];
    const auto [R_ab, d_ab] = directed(graph.edges[cy.edges[0]], cy.a);
    const auto [R_bc, d_bc] = directed(graph.edges[cy.edges[1]], cy.b);
    const auto [R_ca, d_ca] = directed(graph.edges[cy.edges[2]], cy.c);
    (void)R_ab;
    const auto rows = Eigen::seqN(static_cast<Eigen::Index>(3 * l), 3);
    sys.A(rows, static_cast<Eigen::Index>(cy.edges[0])) = R_ca * R_bc * d_ab;
    sys.A(rows, static_cast<Eigen::Index>(cy.edges[1])) = R_ca * d_bc;
    sys.A(rows, static_cast<Eigen::Index>(cy.edges[2])) = d_ca;
    sys.row_weights.segment(static_cast<Eigen::Index>(3 * l), 3).setConstant(cy.weight);
  }
  return sys;
}

ScaleSolution solve_relative_scales(const CalibrationGraph& graph, double mu) {
  graph.require_connected();
  if (!(mu > 0)) fail(ErrorCode::InvalidConfig, "scale regularizer must be positive");
  const LoopSystem sys = build_loop_system(graph);
  const Eigen::Index m = static_cast<Eigen::Index>(graph.edges.size());

  ScaleSolution out;
  out.n_cycles = sys.cycles.size();
  out.lambda.assign(graph.edges.size(), 1.0);
  if (sys.cycles.empty()) return out;

  const Eigen::MatrixXd Q =
      sys.A.transpose() * sys.row_weights.asDiagonal() * sys.A + mu * Eigen::MatrixXd::Identity(m, m);
  const auto objective = [&](const Eigen::VectorXd& u, Eigen::VectorXd& grad) {
    const Eigen::VectorXd lam = u.array().exp().matrix();
    const Eigen::VectorXd r = sys.A * lam;
    const Eigen::VectorXd dev = lam - Eigen::VectorXd::Ones(m);
    const double f = r.dot(sys.row_weights.asDiagonal() * r) + mu * dev.squaredNorm();
    const Eigen::VectorXd g_lam = 2.0 * (sys.A.transpose() * (sys.row_weights.asDiagonal() * r)) + 2.0 * mu * dev;
    grad = lam.cwiseProduct(g_lam);
    return f;
  };

  // The problem is a convex quadratic in lambda; its minimizer seeds the
  // log-space descent and is exact whenever it is strictly positive.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Q);
  const Eigen::MatrixXd& V = eig.eigenvectors();
  const Eigen::VectorXd rhs = V.transpose() * Eigen::VectorXd::Constant(m, mu);
  const Eigen::VectorXd lam0 = V * rhs.cwiseQuotient(eig.eigenvalues());
  const double floor = std::max(1e-6, 1e-3 * lam0.maxCoeff());
  Eigen::VectorXd u0 = lam0.cwiseMax(floor).array().log().matrix();
  if (!u0.allFinite()) u0.setZero();

  LbfgsOptions opts;
  opts.max_iterations = 500;
  opts.gradient_tolerance = 1e-10;
  const LbfgsResult res = minimize_lbfgs(objective, u0, opts);
  out.iterations = res.iterations;
  out.residual = res.value;
  for (Eigen::Index e = 0; e < m; ++e) out.lambda[static_cast<std::size_t>(e)] = std::exp(res.x(e));
  return out;
}

std::vector<std::size_t> extract_mst(const CalibrationGraph& graph) {
  graph.require_connected();
  std::vector<std::size_t> order(graph.edges.size());
  std::iota(order.begin(), order.end(), 0);
  const auto rank = [&](std::size_t k) {
    const auto& e = graph.edges[k];
    return std::make_tuple(e.score, std::min(e.cam_i, e.cam_j), std::max(e.cam_i, e.cam_j));
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rank(a) < rank(b); });
  DisjointSets sets(graph.nodes.size());
  std::vector<std::size_t> tree;
  for (std::size_t k : order) {
    if (sets.unite(graph.edges[k].cam_i, graph.edges[k].cam_j)) tree.push_back(k);
  }
  return tree;
}

Pose directed_edge_transform(const PairCalibration& edge, double lambda, std::size_t from) {
  const Pose forward = Pose::from_rt(edge.R(), lambda * edge.translation_dir);
  if (from == edge.cam_i) return forward;
  if (from == edge.cam_j) return forward.inverse();
  fail(ErrorCode::InvalidConfig, "edge does not touch the given node");
}

std::vector<Pose> compose_absolute_extrinsics(const CalibrationGraph& graph, const std::vector<std::size_t>& mst,
                                              const std::vector<double>& scales, std::size_t root) {
  const std::size_t n = graph.nodes.size();
  if (root >= n) fail(ErrorCode::InvalidConfig, "root camera out of range");
  std::vector<std::vector<std::size_t>> adjacent(n);
  for (std::size_t k : mst) {
    if (k >= graph.edges.size()) fail(ErrorCode::InvalidConfig, "tree edge out of range");
    if (k >= scales.size() || !(scales[k] > 0) || !std::isfinite(scales[k])) {
      fail(ErrorCode::MissingScale, "no valid scale for edge " + graph.nodes[graph.edges[k].cam_i] + "-" +
                                        graph.nodes[graph.edges[k].cam_j]);
    }
    adjacent[graph.edges[k].cam_i].push_back(k);
    adjacent[graph.edges[k].cam_j].push_back(k);
  }

  std::vector<Pose> poses(n);
  std::vector<bool> placed(n, false);
  placed[root] = true;
  std::queue<std::size_t> frontier;
  frontier.push(root);
  while (!frontier.empty()) {
    const std::size_t a = frontier.front();
    frontier.pop();
    for (std::size_t k : adjacent[a]) {
      const auto& e = graph.edges[k];
      const std::size_t b = e.cam_i == a ? e.cam_j : e.cam_i;
      if (placed[b]) continue;
      Pose p = directed_edge_transform(e, scales[k], a) * poses[a];
      p.renormalize();
      poses[b] = p;
      placed[b] = true;
      frontier.push(b);
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (!placed[v]) fail(ErrorCode::DisconnectedGraph, "tree does not reach camera " + graph.nodes[v]);
  }
  return poses;
}

nlohmann::json graph_dump(const CalibrationGraph& graph, const ScaleSolution& scales,
                          const std::vector<std::size_t>& mst) {
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const auto& e = graph.edges[k];
    edges.push_back({{"i", graph.nodes[e.cam_i]},
                     {"j", graph.nodes[e.cam_j]},
                     {"s_ij", e.score},
                     {"lambda", k < scales.lambda.size() ? scales.lambda[k] : 1.0}});
  }
  nlohmann::json tree = nlohmann::json::array();
  for (std::size_t k : mst) tree.push_back({graph.nodes[graph.edges[k].cam_i], graph.nodes[graph.edges[k].cam_j]});
  return {{"edges", edges}, {"mst", tree}, {"n_cycles", scales.n_cycles}, {"residual", scales.residual}};
}

}  // namespace polycap

#pragma once

#include "polycap/pairwise.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace polycap {

/// Cameras as nodes, surviving pairwise estimates as edges weighted by s_ij.
/// An edge (i -> j) maps camera i coordinates into camera j coordinates.
struct CalibrationGraph {
  std::vector<std::string> nodes;
  std::vector<PairCalibration> edges;

  /// Rejects self-loops, duplicate unordered pairs and out-of-range nodes.
  void validate() const;
  /// Connected components over the edges, each sorted by node index.
  std::vector<std::vector<std::size_t>> components() const;
  /// Throws DisconnectedGraph naming the camera ids of every component.
  void require_connected() const;
};

struct LoopCycle {
  std::size_t a = 0, b = 0, c = 0;  // a < b < c, traversed a -> b -> c -> a
  std::array<std::size_t, 3> edges{};
  double weight = 0.0;  // 1 / (geometric mean score + eps)
};

struct LoopSystem {
  std::vector<LoopCycle> cycles;
  Eigen::MatrixXd A;  // 3 rows per cycle, one column per edge
  Eigen::VectorXd row_weights;
};

inline constexpr double kLoopWeightEpsilon = 1e-12;

LoopSystem build_loop_system(const CalibrationGraph& graph);

struct ScaleSolution {
  std::vector<double> lambda;  // one per edge, > 0
  double residual = 0.0;       // final objective
  std::size_t n_cycles = 0;
  int iterations = 0;
};

/// Weighted loop-closure scales on the log parameterization, regularized
/// toward 1 with weight mu. Throws DisconnectedGraph.
ScaleSolution solve_relative_scales(const CalibrationGraph& graph, double mu = 1e-3);

/// Kruskal with (s, min node, max node) ordering. Returns edge indices.
std::vector<std::size_t> extract_mst(const CalibrationGraph& graph);

/// World-to-camera poses by composing scaled edges along the tree from `root`
/// (fixed at identity). Throws MissingScale, DisconnectedGraph.
std::vector<Pose> compose_absolute_extrinsics(const CalibrationGraph& graph, const std::vector<std::size_t>& mst,
                                              const std::vector<double>& scales, std::size_t root = 0);

/// Transform of the edge when walked from `from`; inverts stored direction as needed.
Pose directed_edge_transform(const PairCalibration& edge, double lambda, std::size_t from);

nlohmann::json graph_dump(const CalibrationGraph& graph, const ScaleSolution& scales,
                          const std::vector<std::size_t>& mst);

}  // namespace polycap

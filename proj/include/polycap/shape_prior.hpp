#pragma once

#include "polycap/camgeom.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace polycap {

/// Joint-level linear body model: joints(beta) = mean + basis * beta, meters.
struct ShapePrior {
  std::vector<std::string> names;
  std::vector<std::pair<int, int>> bones;
  Eigen::MatrixXd mean;   // K x 3
  Eigen::MatrixXd basis;  // 3K x n_shape, row 3k + axis

  std::size_t n_joints() const { return static_cast<std::size_t>(mean.rows()); }
  std::size_t n_shape() const { return static_cast<std::size_t>(basis.cols()); }
  Eigen::MatrixXd joints(const Eigen::VectorXd& beta) const;
  /// Throws InvalidConfig on inconsistent sizes, non-finite values or bad bone indices.
  void validate() const;
};

ShapePrior shape_prior_from_json(const nlohmann::json& j);
nlohmann::json shape_prior_to_json(const ShapePrior& prior);
ShapePrior read_shape_prior(const std::filesystem::path& path);
void write_shape_prior(const std::filesystem::path& path, const ShapePrior& prior);

/// Deterministic 17-joint (COCO order) adult prior, z up, +y forward, feet at
/// the floor. Each basis direction changes bone lengths without any uniform
/// scaling component, so global scale stays identifiable; component c moves
/// bone lengths by 1 cm * 0.7^c RMS per unit coefficient.
ShapePrior make_reference_prior(std::size_t n_shape = 10);

/// Kinematic parent of each reference joint (-1 for the hips, which hang off
/// the pelvis center, and for the nose, which hangs off the neck).
const std::vector<int>& reference_parents();

}  // namespace polycap

#include "polycap/shape_prior.hpp"

#include "polycap/camera_io.hpp"
#include "polycap/error.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace polycap {

namespace {

const std::vector<std::string> kNames = {
    "nose",       "left_eye",    "right_eye", "left_ear",  "right_ear",  "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip",
    "right_hip",  "left_knee",   "right_knee", "left_ankle", "right_ankle"};

const std::vector<std::pair<int, int>> kBones = {{0, 1},  {0, 2},   {1, 3},   {2, 4},   {5, 6},   {5, 7},
                                                 {7, 9},  {6, 8},   {8, 10},  {5, 11},  {6, 12},  {11, 12},
                                                 {11, 13}, {13, 15}, {12, 14}, {14, 16}};

// Meters; x to the subject's left, y forward, z up.
constexpr double kMean[17][3] = {
    {0.0, 0.10, 1.62},    {0.035, 0.08, 1.66},  {-0.035, 0.08, 1.66}, {0.075, 0.0, 1.63},  {-0.075, 0.0, 1.63},
    {0.19, 0.0, 1.43},    {-0.19, 0.0, 1.43},   {0.23, 0.0, 1.15},    {-0.23, 0.0, 1.15},  {0.26, 0.02, 0.90},
    {-0.26, 0.02, 0.90},  {0.10, 0.0, 0.95},    {-0.10, 0.0, 0.95},   {0.11, 0.01, 0.52},  {-0.11, 0.01, 0.52},
    {0.11, -0.02, 0.09},  {-0.11, -0.02, 0.09}};

// Portable uniform in [0, 1) and standard normal draws.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

const std::vector<int>& reference_parents() {
  static const std::vector<int> parents = {-1, 0, 0, 1, 2, 11, 12, 5, 6, 7, 8, -1, -1, 11, 12, 13, 14};
  return parents;
}

Eigen::MatrixXd ShapePrior::joints(const Eigen::VectorXd& beta) const {
  if (static_cast<std::size_t>(beta.size()) != n_shape()) fail(ErrorCode::DimensionMismatch, "beta size mismatch");
  const Eigen::VectorXd flat = basis * beta;
  Eigen::MatrixXd out = mean;
  for (Eigen::Index k = 0; k < mean.rows(); ++k) out.row(k) += flat.segment<3>(3 * k).transpose();
  return out;
}

void ShapePrior::validate() const {
  const auto K = static_cast<Eigen::Index>(names.size());
  if (K == 0 || mean.rows() != K || mean.cols() != 3) fail(ErrorCode::InvalidConfig, "shape prior mean is not K x 3");
  if (basis.rows() != 3 * K) fail(ErrorCode::InvalidConfig, "shape prior basis is not 3K x n");
  if (!mean.allFinite() || !basis.allFinite()) fail(ErrorCode::InvalidConfig, "shape prior has non-finite values");
  for (const auto& [a, b] : bones) {
    if (a < 0 || b < 0 || a >= K || b >= K || a == b) fail(ErrorCode::InvalidConfig, "shape prior bone out of range");
  }
}

ShapePrior shape_prior_from_json(const nlohmann::json& j) {
  ShapePrior p;
  try {
    p.names = j.at("names").get<std::vector<std::string>>();
    for (const auto& b : j.at("bones")) p.bones.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
    const auto& mean = j.at("mean");
    const auto& basis = j.at("basis");
    const auto K = static_cast<Eigen::Index>(mean.size());
    p.mean.resize(K, 3);
    for (Eigen::Index k = 0; k < K; ++k) {
      for (int a = 0; a < 3; ++a) p.mean(k, a) = mean.at(static_cast<std::size_t>(k)).at(a).get<double>();
    }
    if (basis.size() != static_cast<std::size_t>(K)) fail(ErrorCode::InvalidConfig, "basis joint count mismatch");
    const auto n = K ? static_cast<Eigen::Index>(basis.at(0).at(0).size()) : 0;
    p.basis.resize(3 * K, n);
    for (Eigen::Index k = 0; k < K; ++k) {
      for (int a = 0; a < 3; ++a) {
        const auto& row = basis.at(static_cast<std::size_t>(k)).at(a);
        if (static_cast<Eigen::Index>(row.size()) != n) fail(ErrorCode::InvalidConfig, "ragged shape basis");
        for (Eigen::Index c = 0; c < n; ++c) p.basis(3 * k + a, c) = row.at(static_cast<std::size_t>(c)).get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("malformed shape prior: ") + e.what());
  }
  p.validate();
  return p;
}

nlohmann::json shape_prior_to_json(const ShapePrior& prior) {
  nlohmann::json bones = nlohmann::json::array();
  for (const auto& [a, b] : prior.bones) bones.push_back({a, b});
  nlohmann::json mean = nlohmann::json::array();
  nlohmann::json basis = nlohmann::json::array();
  for (Eigen::Index k = 0; k < prior.mean.rows(); ++k) {
    mean.push_back({prior.mean(k, 0), prior.mean(k, 1), prior.mean(k, 2)});
    nlohmann::json joint = nlohmann::json::array();
    for (int a = 0; a < 3; ++a) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < prior.basis.cols(); ++c) row.push_back(prior.basis(3 * k + a, c));
      joint.push_back(row);
    }
    basis.push_back(joint);
  }
  return {{"names", prior.names}, {"bones", bones}, {"mean", mean}, {"basis", basis}};
}

ShapePrior read_shape_prior(const std::filesystem::path& path) { return shape_prior_from_json(read_json_file(path)); }

void write_shape_prior(const std::filesystem::path& path, const ShapePrior& prior) {
  write_json_file(path, shape_prior_to_json(prior));
}

ShapePrior make_reference_prior(std::size_t n_shape) {
  ShapePrior p;
  p.names = kNames;
  p.bones = kBones;
  const Eigen::Index K = 17;
  p.mean.resize(K, 3);
  for (Eigen::Index k = 0; k < K; ++k) p.mean.row(k) = Eigen::RowVector3d(kMean[k][0], kMean[k][1], kMean[k][2]);
  const Vec3 pelvis = 0.5 * (p.mean.row(11) + p.mean.row(12)).transpose();
  const Vec3 neck = 0.5 * (p.mean.row(5) + p.mean.row(6)).transpose();
  const auto joint = [&](Eigen::Index k) -> Vec3 { return p.mean.row(k).transpose(); };

  const Eigen::Index nb = static_cast<Eigen::Index>(kBones.size());
  Eigen::VectorXd lengths(nb);
  for (Eigen::Index b = 0; b < nb; ++b) lengths(b) = (joint(kBones[b].first) - joint(kBones[b].second)).norm();
  // First-order bone-length change of a joint displacement field.
  const auto bone_response = [&](const Eigen::VectorXd& field) {
    Eigen::VectorXd d(nb);
    for (Eigen::Index b = 0; b < nb; ++b) {
      const auto [k, l] = kBones[b];
      const Vec3 u = (joint(k) - joint(l)) / lengths(b);
      d(b) = u.dot(field.segment<3>(3 * k) - field.segment<3>(3 * l));
    }
    return d;
  };

  // Uniform scaling about the pelvis: bone response equals the lengths.
  Eigen::VectorXd scaling(3 * K);
  for (Eigen::Index k = 0; k < K; ++k) scaling.segment<3>(3 * k) = joint(k) - pelvis;

  const auto& parents = reference_parents();
  std::mt19937_64 rng(0x5eed'0017ULL);
  if (n_shape == 0 || n_shape > 12) fail(ErrorCode::InvalidConfig, "reference prior supports 1..12 shape components");
  const auto n = static_cast<Eigen::Index>(n_shape);
  Eigen::MatrixXd fields(3 * K, n);
  Eigen::MatrixXd responses(nb, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    // Segment stretches, mostly left-right symmetric.
    std::vector<double> stretch(K);
    for (Eigen::Index k = 0; k < K; ++k) stretch[k] = normal(rng);
    const std::pair<int, int> mirrored[] = {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}};
    for (const auto& [l, r] : mirrored) {
      const double sym = 0.5 * (stretch[l] + stretch[r]);
      const double asym = 0.5 * (stretch[l] - stretch[r]);
      stretch[l] = sym + 0.3 * asym;
      stretch[r] = sym - 0.3 * asym;
    }
    Eigen::VectorXd field = Eigen::VectorXd::Zero(3 * K);
    // Parents precede children in this order.
    const int order[] = {11, 12, 13, 14, 15, 16, 5, 6, 7, 8, 9, 10, 0, 1, 2, 3, 4};
    for (int k : order) {
      Vec3 base, from;
      if (k == 11 || k == 12) {
        base = Vec3::Zero();
        from = pelvis;
      } else if (k == 0) {
        base = 0.5 * (field.segment<3>(3 * 5) + field.segment<3>(3 * 6));
        from = neck;
      } else {
        base = field.segment<3>(3 * parents[static_cast<std::size_t>(k)]);
        from = joint(parents[static_cast<std::size_t>(k)]);
      }
      field.segment<3>(3 * k) = base + stretch[static_cast<std::size_t>(k)] * (joint(k) - from).normalized();
    }
    Eigen::VectorXd resp = bone_response(field);
    // Remove the uniform-scaling component, then earlier components.
    const double a = resp.dot(lengths) / lengths.squaredNorm();
    field -= a * scaling;
    resp -= a * lengths;
    for (Eigen::Index q = 0; q < c; ++q) {
      const double g = resp.dot(responses.col(q)) / responses.col(q).squaredNorm();
      field -= g * fields.col(q);
      resp -= g * responses.col(q);
    }
    const double rms = resp.norm() / std::sqrt(static_cast<double>(nb));
    const double target = 0.01 * std::pow(0.7, static_cast<double>(c));
    fields.col(c) = field * (target / rms);
    responses.col(c) = resp * (target / rms);
  }
  p.basis = fields;
  return p;
}

}  // namespace polycap

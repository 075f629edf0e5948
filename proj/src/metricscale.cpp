#include "polycap/metricscale.hpp"

#include "polycap/bundle.hpp"
#include "polycap/error.hpp"
#include "polycap/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace polycap {

namespace {

double weighted_median(std::vector<std::pair<double, double>> samples) {
  std::sort(samples.begin(), samples.end());
  double total = 0.0;
  for (const auto& s : samples) total += s.second;
  double acc = 0.0;
  for (const auto& [value, weight] : samples) {
    acc += weight;
    if (acc >= 0.5 * total) return value;
  }
  return samples.back().first;
}

double huber_derivative(double r, double delta) { return std::abs(r) <= delta ? r : (r > 0 ? delta : -delta); }

}  // namespace

std::vector<BoneStatistic> aggregate_bones(const SkeletonSequence& skeleton, const ShapePrior& prior) {
  std::map<int, std::vector<const SkeletonFrame*>> by_person;
  for (const auto& f : skeleton.frames) {
    if (f.joints.size() != prior.n_joints()) {
      fail(ErrorCode::DimensionMismatch, "skeleton has " + std::to_string(f.joints.size()) + " joints, prior has " +
                                             std::to_string(prior.n_joints()));
    }
    by_person[f.person_id].push_back(&f);
  }
  std::vector<BoneStatistic> out;
  for (const auto& [person, frames] : by_person) {
    for (std::size_t b = 0; b < prior.bones.size(); ++b) {
      const auto [k, l] = prior.bones[b];
      std::vector<std::pair<double, double>> samples;
      double conf_sum = 0.0;
      for (const SkeletonFrame* f : frames) {
        const auto& jk = f->joints[static_cast<std::size_t>(k)];
        const auto& jl = f->joints[static_cast<std::size_t>(l)];
        if (!jk.visible || !jl.visible) continue;
        const double s = std::sqrt(jk.confidence * jl.confidence);
        conf_sum += s;
        if (s > 0) samples.emplace_back((jk.position - jl.position).norm(), s);
      }
      BoneStatistic stat{person, b, 0.0, 0.0};
      if (!samples.empty()) {
        stat.length = weighted_median(samples);
        stat.confidence = conf_sum / static_cast<double>(frames.size());
      }
      out.push_back(stat);
    }
  }
  return out;
}

ScaleResult estimate_scale_bone_prior(const SkeletonSequence& skeleton, const ShapePrior& prior,
                                      const BonePriorConfig& cfg) {
  prior.validate();
  if (!(cfg.delta > 0) || !(cfg.lambda_bones > 0) || !(cfg.lambda_beta >= 0)) {
    fail(ErrorCode::InvalidConfig, "bone prior weights must be positive");
  }
  std::vector<BoneStatistic> bones = aggregate_bones(skeleton, prior);
  std::erase_if(bones, [](const BoneStatistic& b) { return !(b.confidence > 0) || !(b.length > 0); });
  if (bones.empty()) fail(ErrorCode::NoReliableBones, "no bone has confident endpoints");

  std::map<int, Eigen::Index> person_slot;
  for (const auto& b : bones) person_slot.emplace(b.person, 0);
  Eigen::Index next = 0;
  for (auto& [person, slot] : person_slot) slot = next++;
  const auto n = static_cast<Eigen::Index>(prior.n_shape());
  const Eigen::Index P = next;

  double conf_total = 0.0;
  for (const auto& b : bones) conf_total += b.confidence;

  const Eigen::MatrixXd mean_joints = prior.mean;
  // Prior bone length and its gradient w.r.t. beta.
  const auto bone_model = [&](std::size_t bone, const Eigen::VectorXd& beta, Eigen::RowVectorXd* grad) {
    const auto [k, l] = prior.bones[bone];
    Vec3 diff = (mean_joints.row(k) - mean_joints.row(l)).transpose();
    const Eigen::MatrixXd Bk = prior.basis.middleRows(3 * k, 3);
    const Eigen::MatrixXd Bl = prior.basis.middleRows(3 * l, 3);
    if (n > 0) diff += (Bk - Bl) * beta;
    const double len = diff.norm();
    if (grad) *grad = (diff / len).transpose() * (Bk - Bl);
    return len;
  };

  // alpha_0 from raw lengths and the mean shape.
  double num = 0.0;
  for (const auto& b : bones) num += b.confidence * bone_model(b.bone, Eigen::VectorXd::Zero(n), nullptr) / b.length;
  const double alpha0 = num / conf_total;

  const auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    grad.setZero(x.size());
    const double alpha = std::exp(x(0));
    double data = 0.0;
    for (const auto& b : bones) {
      const Eigen::Index off = 1 + person_slot.at(b.person) * n;
      const Eigen::VectorXd beta = x.segment(off, n);
      Eigen::RowVectorXd dlen;
      const double model = bone_model(b.bone, beta, &dlen);
      const double r = alpha * b.length - model;
      data += b.confidence * huber(std::abs(r), cfg.delta);
      const double psi = b.confidence * huber_derivative(r, cfg.delta);
      grad(0) += psi * alpha * b.length;
      if (n > 0) grad.segment(off, n) -= psi * dlen.transpose();
    }
    const double scale = cfg.lambda_bones / conf_total;
    grad *= scale;
    const Eigen::VectorXd betas = x.tail(P * n);
    grad.tail(P * n) += 2.0 * cfg.lambda_beta * betas;
    return scale * data + cfg.lambda_beta * betas.squaredNorm();
  };

  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(1 + P * n);
  x0(0) = std::log(alpha0);
  LbfgsOptions opts;
  opts.max_iterations = cfg.max_iterations;
  opts.gradient_tolerance = 1e-12;
  const LbfgsResult res = minimize_lbfgs(objective, x0, opts);

  ScaleResult out;
  out.method = "bone-prior";
  out.alpha = std::exp(res.x(0));
  for (const auto& [person, slot] : person_slot) out.betas[person] = res.x.segment(1 + slot * n, n);
  out.beta = out.betas.begin()->second;
  nlohmann::json per_bone = nlohmann::json::array();
  for (const auto& b : bones) {
    const double model = bone_model(b.bone, out.betas.at(b.person), nullptr);
    per_bone.push_back({{"person", b.person},
                        {"bone", {prior.bones[b.bone].first, prior.bones[b.bone].second}},
                        {"raw_length", b.length},
                        {"confidence", b.confidence},
                        {"residual_m", out.alpha * b.length - model}});
  }
  out.diagnostics = {{"alpha0", alpha0}, {"objective", res.value}, {"iterations", res.iterations}, {"bones", per_bone}};
  return out;
}

double depth_frame_score(const DepthCandidate& candidate, const CameraModel& camera, double lambda_c) {
  const std::size_t K = candidate.detections.size();
  if (K == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < K && k < candidate.joints.size(); ++k) {
    const auto proj = project_if_visible(candidate.joints[k], camera);
    if (!candidate.joints[k].allFinite() || !proj) continue;
    sum += std::exp(-lambda_c * (*proj - candidate.detections[k].position).norm() / camera.intrinsics.fx);
  }
  return sum / static_cast<double>(K);
}

ScaleResult estimate_scale_depth(std::span<const DepthCandidate> candidates, std::span<const CameraModel> cameras,
                                 const DepthScaleConfig& cfg) {
  std::map<std::size_t, std::pair<double, const DepthCandidate*>> best;
  for (const auto& c : candidates) {
    if (c.camera >= cameras.size() || c.depth == nullptr) {
      fail(ErrorCode::DimensionMismatch, "depth candidate references an unknown camera");
    }
    if (c.joints.size() != c.detections.size()) fail(ErrorCode::DimensionMismatch, "joint/detection count mismatch");
    const double h = depth_frame_score(c, cameras[c.camera], cfg.lambda_c);
    auto it = best.find(c.camera);
    if (it == best.end() || h > it->second.first) best[c.camera] = {h, &c};
  }

  double num = 0.0, den = 0.0;
  std::size_t samples = 0;
  nlohmann::json views = nlohmann::json::array();
  for (const auto& [camera, chosen] : best) {
    const DepthCandidate& c = *chosen.second;
    const CameraModel& cam = cameras[camera];
    double vnum = 0.0, vden = 0.0;
    for (std::size_t k = 0; k < c.joints.size(); ++k) {
      const double w = c.detections[k].confidence;
      if (!(w > cfg.zeta) || !c.joints[k].allFinite()) continue;
      const auto proj = project_if_visible(c.joints[k], cam);
      if (!proj) continue;
      const double d_m = c.depth->sample_nearest(*proj);
      const double d_a = cam.pose.apply(c.joints[k]).z();
      if (!std::isfinite(d_m) || !(d_m > 0) || !(d_a > 0)) continue;
      vnum += w * d_m / d_a;
      vden += w;
      ++samples;
    }
    num += vnum;
    den += vden;
    views.push_back({{"camera", cam.id},
                     {"frame_index", c.frame_index},
                     {"h", chosen.first},
                     {"ratio", vden > 0 ? nlohmann::json(vnum / vden) : nlohmann::json(nullptr)}});
  }
  if (!(den > 0)) fail(ErrorCode::NoDepthSamples, "no finite depth sample at a confident keypoint");
  ScaleResult out;
  out.method = "depth";
  out.alpha = num / den;
  out.diagnostics = {{"samples", samples}, {"views", views}};
  return out;
}

Scene apply_scale(const Scene& scene, double alpha) {
  if (!(alpha > 0) || !std::isfinite(alpha)) fail(ErrorCode::NonPositiveScale, "scale must be positive and finite");
  Scene out = scene;
  for (auto& f : out.skeletons.frames) {
    for (auto& j : f.joints) j.position *= alpha;
  }
  for (auto& c : out.cameras) c.pose.translation *= alpha;
  for (auto& p : out.points) p *= alpha;
  return out;
}

nlohmann::json scale_result_json(const ScaleResult& result) {
  nlohmann::json betas = nlohmann::json::object();
  for (const auto& [person, beta] : result.betas) {
    betas[std::to_string(person)] = std::vector<double>(beta.data(), beta.data() + beta.size());
  }
  return {{"method", result.method}, {"alpha", result.alpha}, {"betas", betas}, {"diagnostics", result.diagnostics}};
}

}  // namespace polycap

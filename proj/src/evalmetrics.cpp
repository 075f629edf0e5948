#include "polycap/evalmetrics.hpp"

#include "polycap/error.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace polycap {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

std::string threshold_key(double t) {
  std::ostringstream s;
  s << t;
  return s.str();
}

}  // namespace

AlignmentTransform AlignmentTransform::inverse() const {
  AlignmentTransform inv;
  inv.scale = 1.0 / scale;
  inv.rotation = rotation.conjugate();
  inv.translation = -(inv.scale * (inv.rotation * translation));
  return inv;
}

AlignmentTransform similarity_align(std::span<const Vec3> source, std::span<const Vec3> target, bool allow_scale) {
  const std::size_t n = source.size();
  if (n != target.size()) fail(ErrorCode::DimensionMismatch, "alignment point sets differ in size");
  if (n < 3) fail(ErrorCode::DegenerateConfiguration, "alignment needs at least 3 point pairs");
  Vec3 ms = Vec3::Zero(), mt = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    ms += source[i];
    mt += target[i];
  }
  ms /= static_cast<double>(n);
  mt /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  Mat3 src_cov = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = source[i] - ms;
    const Vec3 b = target[i] - mt;
    cov += b * a.transpose();
    src_cov += a * a.transpose();
    var_s += a.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_s /= static_cast<double>(n);
  const Vec3 spread = Eigen::JacobiSVD<Mat3>(src_cov).singularValues();
  if (!(spread(1) > 1e-12 * spread(0)) || !(spread(0) > 0)) {
    fail(ErrorCode::DegenerateConfiguration, "alignment points are collinear or coincident");
  }
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 S = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) S(2) = -1.0;
  const Mat3 R = svd.matrixU() * S.asDiagonal() * svd.matrixV().transpose();
  AlignmentTransform out;
  out.rotation = Quat(R).normalized();
  out.scale = allow_scale ? svd.singularValues().dot(S) / var_s : 1.0;
  out.translation = mt - out.scale * (R * ms);
  return out;
}

double scene_scale(std::span<const Vec3> centers) {
  if (centers.empty()) return 0.0;
  Vec3 m = Vec3::Zero();
  for (const auto& c : centers) m += c;
  m /= static_cast<double>(centers.size());
  double s = 0.0;
  for (const auto& c : centers) s += (c - m).squaredNorm();
  return std::sqrt(s / static_cast<double>(centers.size()));
}

CameraMetrics camera_metrics(std::span<const CameraModel> estimated, std::span<const CameraModel> ground_truth,
                             const std::vector<double>& thresholds_deg, const std::vector<double>& thresholds_pct,
                             std::optional<double> scale_override) {
  if (estimated.size() != ground_truth.size()) fail(ErrorCode::IdMismatch, "camera counts differ");
  std::vector<const CameraModel*> est, gt;
  for (const auto& g : ground_truth) {
    const auto it = std::find_if(estimated.begin(), estimated.end(), [&](const CameraModel& e) { return e.id == g.id; });
    if (it == estimated.end()) fail(ErrorCode::IdMismatch, "estimate lacks camera " + g.id);
    est.push_back(&*it);
    gt.push_back(&g);
  }
  const std::size_t n = gt.size();
  std::vector<Vec3> ce(n), cg(n);
  for (std::size_t i = 0; i < n; ++i) {
    ce[i] = est[i]->pose.center();
    cg[i] = gt[i]->pose.center();
  }
  CameraMetrics m;
  m.rigid = similarity_align(ce, cg, false);
  m.similarity = similarity_align(ce, cg, true);
  const double scale = scale_override.value_or(scene_scale(cg));

  std::vector<double> err_rigid(n), err_sim(n);
  for (std::size_t i = 0; i < n; ++i) {
    err_rigid[i] = (m.rigid.apply(ce[i]) - cg[i]).norm();
    err_sim[i] = (m.similarity.apply(ce[i]) - cg[i]).norm();
    m.te += err_rigid[i] / static_cast<double>(n);
    m.s_te += err_sim[i] / static_cast<double>(n);
    const Quat aligned = est[i]->pose.rotation * m.rigid.rotation.conjugate();
    m.ae += rotation_angle_between(aligned, gt[i]->pose.rotation) * kRadToDeg / static_cast<double>(n);
    const double h = gt[i]->intrinsics.height;
    const double fov_e = 2.0 * std::atan(h / (2.0 * est[i]->intrinsics.fy));
    const double fov_g = 2.0 * std::atan(h / (2.0 * gt[i]->intrinsics.fy));
    m.fov += std::abs(fov_e - fov_g) * kRadToDeg / static_cast<double>(n);
  }

  std::vector<double> rel_err;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const Quat re = est[i]->pose.rotation * est[j]->pose.rotation.conjugate();
      const Quat rg = gt[i]->pose.rotation * gt[j]->pose.rotation.conjugate();
      rel_err.push_back(rotation_angle_between(re, rg) * kRadToDeg);
    }
  }
  for (double t : thresholds_deg) {
    const auto hits = std::count_if(rel_err.begin(), rel_err.end(), [&](double e) { return e < t; });
    m.rra[t] = rel_err.empty() ? 1.0 : static_cast<double>(hits) / static_cast<double>(rel_err.size());
  }
  for (double t : thresholds_pct) {
    const double radius = t / 100.0 * scale;
    const auto hr = std::count_if(err_rigid.begin(), err_rigid.end(), [&](double e) { return e < radius; });
    const auto hs = std::count_if(err_sim.begin(), err_sim.end(), [&](double e) { return e < radius; });
    m.cca[t] = static_cast<double>(hr) / static_cast<double>(n);
    m.s_cca[t] = static_cast<double>(hs) / static_cast<double>(n);
  }
  return m;
}

double pa_mpjpe_instance(std::span<const Vec3> estimated, std::span<const Vec3> ground_truth) {
  const AlignmentTransform T = similarity_align(estimated, ground_truth, true);
  double sum = 0.0;
  for (std::size_t k = 0; k < estimated.size(); ++k) sum += (T.apply(estimated[k]) - ground_truth[k]).norm();
  return sum / static_cast<double>(estimated.size());
}

PoseMetrics pose_metrics(const SkeletonSequence& estimated, const SkeletonSequence& ground_truth,
                         const AlignmentTransform& alignment) {
  std::map<std::pair<long, int>, const SkeletonFrame*> gt_index;
  for (const auto& f : ground_truth.frames) gt_index[{f.frame_index, f.person_id}] = &f;
  PoseMetrics m;
  double w_sum = 0.0, pa_sum = 0.0;
  for (const auto& f : estimated.frames) {
    const auto it = gt_index.find({f.frame_index, f.person_id});
    if (it == gt_index.end()) continue;
    const auto& g = *it->second;
    std::vector<Vec3> e_pts, g_pts;
    for (std::size_t k = 0; k < f.joints.size() && k < g.joints.size(); ++k) {
      if (!f.joints[k].visible || !g.joints[k].visible) continue;
      e_pts.push_back(f.joints[k].position);
      g_pts.push_back(g.joints[k].position);
    }
    if (e_pts.size() < 3) continue;
    double pa = 0.0;
    try {
      pa = pa_mpjpe_instance(e_pts, g_pts);
    } catch (const Error&) {
      continue;
    }
    double w = 0.0;
    for (std::size_t k = 0; k < e_pts.size(); ++k) w += (alignment.apply(e_pts[k]) - g_pts[k]).norm();
    w_sum += w;
    pa_sum += pa * static_cast<double>(e_pts.size());
    m.n_joints += e_pts.size();
    ++m.n_instances;
  }
  if (m.n_joints == 0) fail(ErrorCode::EmptyOverlap, "no joint is visible in both skeleton sets");
  m.w_mpjpe = w_sum / static_cast<double>(m.n_joints);
  m.pa_mpjpe = pa_sum / static_cast<double>(m.n_joints);
  return m;
}

nlohmann::json metrics_json(const CameraMetrics& cam, const std::optional<PoseMetrics>& pose) {
  nlohmann::json j = {{"te", cam.te}, {"s_te", cam.s_te}, {"ae", cam.ae}, {"fov", cam.fov}};
  for (const auto& [t, v] : cam.rra) j["rra@" + threshold_key(t)] = v;
  for (const auto& [t, v] : cam.cca) j["cca@" + threshold_key(t)] = v;
  for (const auto& [t, v] : cam.s_cca) j["s_cca@" + threshold_key(t)] = v;
  j["similarity_scale"] = cam.similarity.scale;
  if (pose) {
    j["w_mpjpe"] = pose->w_mpjpe;
    j["pa_mpjpe"] = pose->pa_mpjpe;
    j["n_joints"] = pose->n_joints;
  }
  return j;
}

std::string metrics_csv(const std::string& sequence, const CameraMetrics& cam, const std::optional<PoseMetrics>& pose) {
  std::ostringstream head, row;
  head << "sequence,w_mpjpe,pa_mpjpe,te,s_te,ae,fov";
  row << sequence << std::setprecision(10);
  if (pose) {
    row << ',' << pose->w_mpjpe << ',' << pose->pa_mpjpe;
  } else {
    row << ",,";
  }
  row << ',' << cam.te << ',' << cam.s_te << ',' << cam.ae << ',' << cam.fov;
  for (const auto& [t, v] : cam.rra) {
    head << ",rra@" << threshold_key(t);
    row << ',' << v;
  }
  for (const auto& [t, v] : cam.cca) {
    head << ",cca@" << threshold_key(t);
    row << ',' << v;
  }
  for (const auto& [t, v] : cam.s_cca) {
    head << ",s_cca@" << threshold_key(t);
    row << ',' << v;
  }
  return head.str() + "\n" + row.str() + "\n";
}

}  // namespace polycap

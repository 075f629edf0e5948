#include "polycap/lift3d.hpp"

#include "polycap/camera_io.hpp"
#include "polycap/error.hpp"
#include "polycap/parallel.hpp"

#include <json.hpp>

#include <cmath>
#include <set>
#include <sstream>

namespace polycap {

double point_confidence(const Vec3& X, std::span<const ViewObservation> observations,
                        std::span<const CameraModel> cameras, const ConfidenceParams& params) {
  if (!X.allFinite()) return 0.0;
  std::vector<double> w, s;
  for (const auto& o : observations) {
    if (!(o.weight > 0)) continue;
    const CameraModel& cam = cameras[o.camera];
    const auto proj = project_if_visible(X, cam);
    double score = 0.0;
    if (proj) {
      const double residual = (*proj - o.pixel).norm() / cam.intrinsics.fx;
      score = std::exp(-params.lambda_c * residual);
    }
    w.push_back(o.weight);
    s.push_back(score);
  }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = i + 1; j < w.size(); ++j) {
      sum += std::sqrt(w[i] * w[j]) * std::sqrt(s[i] * s[j]);
      ++pairs;
    }
  }
  return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

JointEstimate triangulate_joint(std::span<const ViewObservation> observations, std::span<const CameraModel> cameras,
                                const ConfidenceParams& params) {
  JointEstimate out;
  std::vector<WeightedObservation> views;
  for (const auto& o : observations) {
    if (!(o.weight > 0)) continue;
    const CameraModel& cam = cameras[o.camera];
    views.push_back({o.camera, undistort_pixel(o.pixel, cam.intrinsics, cam.distortion), o.weight});
  }
  if (views.size() < 2) return out;
  try {
    const Vec3 X = triangulate_weighted_dlt(views, cameras);
    if (!X.allFinite()) return out;
    out.position = X;
    out.visible = true;
    out.confidence = point_confidence(X, observations, cameras, params);
  } catch (const Error&) {
  }
  return out;
}

std::vector<std::vector<ViewObservation>> group_observations(const DetectionTimeline& timeline,
                                                             const FrameGroup& group, int person) {
  std::vector<std::vector<ViewObservation>> joints(timeline.n_keypoints);
  for (std::size_t c = 0; c < timeline.cameras.size(); ++c) {
    if (!group.members[c]) continue;
    const auto& persons = timeline.cameras[c].frames[*group.members[c]].persons;
    const auto it = persons.find(person);
    if (it == persons.end()) continue;
    for (std::size_t k = 0; k < timeline.n_keypoints && k < it->second.size(); ++k) {
      joints[k].push_back({c, it->second[k].position, it->second[k].confidence});
    }
  }
  return joints;
}

SkeletonSequence triangulate_sequence(const DetectionTimeline& timeline, const std::vector<CameraModel>& cameras,
                                      const ConfidenceParams& params, int threads) {
  if (cameras.size() != timeline.cameras.size()) {
    fail(ErrorCode::DimensionMismatch, "camera list does not match the timeline");
  }
  if (!(params.lambda_c > 0)) fail(ErrorCode::InvalidConfig, "confidence decay must be positive");
  struct Task {
    const FrameGroup* group;
    int person;
  };
  std::vector<Task> tasks;
  for (const auto& g : timeline.groups) {
    std::set<int> persons;
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      if (!g.members[c]) continue;
      for (const auto& [pid, kps] : timeline.cameras[c].frames[*g.members[c]].persons) persons.insert(pid);
    }
    for (int pid : persons) tasks.push_back({&g, pid});
  }

  SkeletonSequence seq;
  seq.frames.resize(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    const Task& task = tasks[i];
    SkeletonFrame& frame = seq.frames[i];
    frame.frame_index = task.group->frame_index;
    frame.timestamp = task.group->timestamp;
    frame.person_id = task.person;
    const auto obs = group_observations(timeline, *task.group, task.person);
    frame.joints.reserve(obs.size());
    for (const auto& joint_obs : obs) frame.joints.push_back(triangulate_joint(joint_obs, cameras, params));
  });
  return seq;
}

std::vector<Vec3> merge_pointmaps(std::span<const DepthView> views, std::span<const CameraModel> cameras, int stride) {
  if (stride < 1) fail(ErrorCode::InvalidConfig, "point cloud stride must be >= 1");
  std::vector<Vec3> cloud;
  for (const auto& view : views) {
    if (view.camera >= cameras.size() || view.depth == nullptr) {
      fail(ErrorCode::DimensionMismatch, "depth view references an unknown camera");
    }
    const CameraModel& cam = cameras[view.camera];
    const DepthMap& D = *view.depth;
    if (D.width != cam.intrinsics.width || D.height != cam.intrinsics.height) {
      fail(ErrorCode::DimensionMismatch, "depth map " + std::to_string(D.width) + "x" + std::to_string(D.height) +
                                             " does not match camera " + cam.id);
    }
    const Mat3 Rt = cam.pose.R().transpose();
    for (int v = 0; v < D.height; v += stride) {
      for (int u = 0; u < D.width; u += stride) {
        const double d = D.at(u, v);
        if (!std::isfinite(d) || !(d > 0)) continue;
        const Vec2 n = cam.intrinsics.to_normalized(undistort_pixel(Vec2(u, v), cam.intrinsics, cam.distortion));
        const Vec3 Xc(n.x() * d, n.y() * d, d);
        cloud.push_back(Rt * (Xc - cam.pose.translation));
      }
    }
  }
  return cloud;
}

void write_skeleton_sequence(const std::filesystem::path& path, const SkeletonSequence& sequence) {
  std::ostringstream out;
  for (const auto& f : sequence.frames) {
    nlohmann::json joints = nlohmann::json::array();
    for (const auto& j : f.joints) {
      if (j.visible) {
        joints.push_back({j.position.x(), j.position.y(), j.position.z(), j.confidence});
      } else {
        joints.push_back({nullptr, nullptr, nullptr, 0.0});
      }
    }
    const nlohmann::json line = {{"frame_index", f.frame_index}, {"person_id", f.person_id}, {"joints", joints}};
    out << line.dump() << '\n';
  }
  write_text_file(path, out.str());
}

SkeletonSequence read_skeleton_sequence(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  SkeletonSequence seq;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SkeletonFrame f;
      f.frame_index = j.at("frame_index").get<long>();
      f.person_id = j.at("person_id").get<int>();
      for (const auto& jj : j.at("joints")) {
        JointEstimate e;
        if (jj.size() != 4) fail(ErrorCode::IoError, "joint entries must have 4 values");
        if (!jj[0].is_null()) {
          e.position = Vec3(jj[0].get<double>(), jj[1].get<double>(), jj[2].get<double>());
          e.visible = true;
        }
        e.confidence = jj[3].is_null() ? 0.0 : jj[3].get<double>();
        f.joints.push_back(e);
      }
      seq.frames.push_back(std::move(f));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::IoError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return seq;
}

}  // namespace polycap

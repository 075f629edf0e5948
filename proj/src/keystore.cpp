#include "polycap/keystore.hpp"

#include "polycap/camera_io.hpp"
#include "polycap/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace polycap {

using nlohmann::json;

SkeletonDef read_skeleton_file(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  SkeletonDef def;
  try {
    def.names = j.at("names").get<std::vector<std::string>>();
    for (const auto& b : j.at("bones")) def.bones.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, path.string() + ": " + e.what());
  }
  const int k = static_cast<int>(def.names.size());
  for (const auto& [a, b] : def.bones) {
    if (a < 0 || b < 0 || a >= k || b >= k || a == b) fail(ErrorCode::IoError, "bone references invalid joint");
  }
  return def;
}

void write_skeleton_file(const std::filesystem::path& path, const SkeletonDef& skeleton) {
  json bones = json::array();
  for (const auto& [a, b] : skeleton.bones) bones.push_back({a, b});
  write_json_file(path, json{{"names", skeleton.names}, {"bones", bones}});
}

std::vector<DetectionRecord> read_keypoint_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<DetectionRecord> records;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      DetectionRecord r;
      r.camera_id = j.at("camera_id").get<std::string>();
      r.frame_index = j.at("frame_index").get<long>();
      r.person_id = j.at("person_id").get<int>();
      if (j.contains("timestamp")) r.timestamp = j.at("timestamp").get<double>();
      for (const auto& kp : j.at("keypoints")) {
        r.keypoints.push_back(Keypoint2D{Vec2(kp.at(0).get<double>(), kp.at(1).get<double>()), kp.at(2).get<double>()});
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      fail(ErrorCode::IoError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_keypoint_file(const std::filesystem::path& path, std::span<const DetectionRecord> records) {
  std::string out;
  for (const auto& r : records) {
    json kps = json::array();
    for (const auto& kp : r.keypoints) kps.push_back({kp.position.x(), kp.position.y(), kp.confidence});
    json j{{"camera_id", r.camera_id}, {"frame_index", r.frame_index}, {"person_id", r.person_id}, {"keypoints", kps}};
    if (r.timestamp) j["timestamp"] = *r.timestamp;
    out += j.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

std::optional<std::size_t> DetectionTimeline::camera_index(const std::string& id) const {
  for (std::size_t c = 0; c < cameras.size(); ++c) {
    if (cameras[c].camera_id == id) return c;
  }
  return std::nullopt;
}

std::vector<std::string> DetectionTimeline::camera_ids() const {
  std::vector<std::string> ids;
  for (const auto& c : cameras) ids.push_back(c.camera_id);
  return ids;
}

namespace {

double half_period_tolerance(const CameraTrack& a, const CameraTrack& b) {
  return 0.5 * std::max(1.0 / a.frame_rate, 1.0 / b.frame_rate) - kPairingEpsilon;
}

/// Index of the frame in `track` nearest to `t`, if within `tol`.
std::optional<std::size_t> nearest_frame(const CameraTrack& track, double t, double tol) {
  const auto& f = track.frames;
  if (f.empty()) return std::nullopt;
  auto it = std::lower_bound(f.begin(), f.end(), t,
                             [](const FrameDetections& fd, double value) { return fd.timestamp < value; });
  std::optional<std::size_t> best;
  double best_dt = tol;
  const auto consider = [&](std::size_t idx) {
    const double dt = std::abs(f[idx].timestamp - t);
    if (dt < best_dt) {
      best_dt = dt;
      best = idx;
    }
  };
  const std::size_t pos = static_cast<std::size_t>(it - f.begin());
  if (pos < f.size()) consider(pos);
  if (pos > 0) consider(pos - 1);
  return best;
}

void check_frame_rate(const std::string& id, double declared,
                      const std::vector<std::pair<long, double>>& stamped) {
  if (stamped.size() < 2) return;
  std::vector<double> spacing;
  for (std::size_t i = 1; i < stamped.size(); ++i) {
    const long dk = stamped[i].first - stamped[i - 1].first;
    if (dk > 0) spacing.push_back((stamped[i].second - stamped[i - 1].second) / dk);
  }
  if (spacing.empty()) return;
  std::nth_element(spacing.begin(), spacing.begin() + spacing.size() / 2, spacing.end());
  const double measured = spacing[spacing.size() / 2];
  const double expected = 1.0 / declared;
  if (std::abs(measured - expected) > 0.01 * expected) {
    std::ostringstream os;
    os << "camera " << id << " declares " << declared << " fps but timestamps are spaced " << measured << " s";
    fail(ErrorCode::InconsistentFrameRate, os.str());
  }
}

}  // namespace

DetectionTimeline build_timeline(std::span<const DetectionRecord> records, std::size_t n_keypoints,
                                 const std::map<std::string, double>& lags,
                                 const std::map<std::string, double>& frame_rates,
                                 const std::optional<std::string>& anchor_id) {
  std::map<std::string, std::map<long, FrameDetections>> by_camera;
  std::map<std::string, std::vector<std::pair<long, double>>> stamps;
  for (const auto& r : records) {
    if (r.keypoints.size() != n_keypoints) {
      fail(ErrorCode::InvalidDetections, "record of camera " + r.camera_id + " frame " +
                                             std::to_string(r.frame_index) + " has wrong keypoint count");
    }
    for (const auto& kp : r.keypoints) {
      if (!(kp.confidence >= 0.0 && kp.confidence <= 1.0) || !kp.position.allFinite()) {
        fail(ErrorCode::InvalidDetections, "keypoint with confidence outside [0,1] or non-finite position");
      }
    }
    auto& frame = by_camera[r.camera_id][r.frame_index];
    frame.frame_index = r.frame_index;
    if (!frame.persons.emplace(r.person_id, r.keypoints).second) {
      fail(ErrorCode::InvalidDetections, "duplicate record for camera " + r.camera_id + " frame " +
                                             std::to_string(r.frame_index) + " person " +
                                             std::to_string(r.person_id));
    }
    if (r.timestamp) stamps[r.camera_id].emplace_back(r.frame_index, *r.timestamp);
  }

  DetectionTimeline tl;
  tl.n_keypoints = n_keypoints;
  for (auto& [id, frames] : by_camera) {
    const auto lag = lags.find(id);
    if (lag == lags.end()) fail(ErrorCode::MissingLag, "no lag for camera " + id);
    const auto rate = frame_rates.find(id);
    if (rate == frame_rates.end() || !(rate->second > 0)) {
      fail(ErrorCode::InvalidDetections, "no frame rate for camera " + id);
    }
    auto& st = stamps[id];
    std::sort(st.begin(), st.end());
    check_frame_rate(id, rate->second, st);

    CameraTrack track;
    track.camera_id = id;
    track.frame_rate = rate->second;
    track.lag = lag->second;
    for (auto& [index, fd] : frames) {
      fd.timestamp = static_cast<double>(index) / track.frame_rate - track.lag;
      track.frames.push_back(std::move(fd));
    }
    tl.cameras.push_back(std::move(track));
  }
  if (tl.cameras.empty()) fail(ErrorCode::InvalidDetections, "no detections");

  if (anchor_id) {
    const auto idx = tl.camera_index(*anchor_id);
    if (!idx) fail(ErrorCode::InvalidDetections, "anchor camera " + *anchor_id + " has no detections");
    tl.anchor = *idx;
  }

  const CameraTrack& anchor = tl.cameras[tl.anchor];
  for (std::size_t f = 0; f < anchor.frames.size(); ++f) {
    FrameGroup g;
    g.frame_index = anchor.frames[f].frame_index;
    g.timestamp = anchor.frames[f].timestamp;
    g.members.resize(tl.cameras.size());
    g.members[tl.anchor] = f;
    for (std::size_t c = 0; c < tl.cameras.size(); ++c) {
      if (c == tl.anchor) continue;
      g.members[c] = nearest_frame(tl.cameras[c], g.timestamp, half_period_tolerance(anchor, tl.cameras[c]));
    }
    tl.groups.push_back(std::move(g));
  }

  for (std::size_t i = 0; i < tl.cameras.size(); ++i) {
    for (std::size_t j = 0; j < tl.cameras.size(); ++j) {
      if (i == j) continue;
      for (const auto& [fi, fj] : tl.pair_frames(i, j)) {
        tl.cameras[i].frames[fi].paired = true;
        (void)fj;
      }
    }
  }
  return tl;
}

std::vector<std::pair<std::size_t, std::size_t>> DetectionTimeline::pair_frames(std::size_t cam_i,
                                                                                std::size_t cam_j) const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const CameraTrack& a = cameras.at(cam_i);
  const CameraTrack& b = cameras.at(cam_j);
  const double tol = half_period_tolerance(a, b);
  for (std::size_t f = 0; f < a.frames.size(); ++f) {
    if (auto g = nearest_frame(b, a.frames[f].timestamp, tol)) out.emplace_back(f, *g);
  }
  return out;
}

std::vector<Correspondence> score_and_filter_pairs(const DetectionTimeline& timeline, std::size_t cam_i,
                                                   std::size_t cam_j, double tau) {
  if (cam_i == cam_j) fail(ErrorCode::InvalidConfig, "correspondences need two distinct cameras");
  const auto paired = timeline.pair_frames(cam_i, cam_j);
  if (paired.empty()) {
    fail(ErrorCode::NoSharedFrames, "cameras " + timeline.cameras[cam_i].camera_id + " and " +
                                        timeline.cameras[cam_j].camera_id + " share no frames");
  }
  std::vector<Correspondence> out;
  for (const auto& [fi, fj] : paired) {
    const FrameDetections& a = timeline.cameras[cam_i].frames[fi];
    const FrameDetections& b = timeline.cameras[cam_j].frames[fj];
    for (const auto& [person, kps_a] : a.persons) {
      const auto it = b.persons.find(person);
      if (it == b.persons.end()) continue;
      const auto& kps_b = it->second;
      for (std::size_t k = 0; k < kps_a.size(); ++k) {
        const double w = pair_confidence(kps_a[k].confidence, kps_b[k].confidence);
        if (!(w > tau)) continue;
        Correspondence c;
        c.cam_i = cam_i;
        c.cam_j = cam_j;
        c.pixel_i = kps_a[k].position;
        c.pixel_j = kps_b[k].position;
        c.confidence = w;
        c.frame_i = a.frame_index;
        c.frame_j = b.frame_index;
        c.person_id = person;
        c.keypoint_id = static_cast<int>(k);
        out.push_back(c);
      }
    }
  }
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t pool_size, std::size_t budget, std::uint64_t seed) {
  std::vector<std::size_t> idx(pool_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (pool_size <= budget) return idx;
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `budget` slots become a uniform subset.
  for (std::size_t i = 0; i < budget; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool_size - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<Correspondence> sample_correspondences(std::span<const Correspondence> pool, std::size_t budget,
                                                   std::uint64_t seed) {
  if (pool.empty()) fail(ErrorCode::EmptyPool, "no correspondences survived filtering");
  std::vector<Correspondence> out;
  for (std::size_t i : sample_indices(pool.size(), budget, seed)) out.push_back(pool[i]);
  return out;
}

}  // namespace polycap

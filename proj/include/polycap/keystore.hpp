#pragma once

#include "polycap/camgeom.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polycap {

/// Keypoint names and bone edges shared by every detection record.
struct SkeletonDef {
  std::vector<std::string> names;
  std::vector<std::pair<int, int>> bones;

  std::size_t size() const { return names.size(); }
};

struct Keypoint2D {
  Vec2 position = Vec2::Zero();
  double confidence = 0.0;  // [0, 1]
};

/// One line of a keypoint JSONL file: one camera, one frame, one person.
struct DetectionRecord {
  std::string camera_id;
  long frame_index = 0;
  int person_id = 0;
  std::vector<Keypoint2D> keypoints;
  std::optional<double> timestamp;  // camera-local seconds, optional
};

SkeletonDef read_skeleton_file(const std::filesystem::path& path);
void write_skeleton_file(const std::filesystem::path& path, const SkeletonDef& skeleton);
std::vector<DetectionRecord> read_keypoint_file(const std::filesystem::path& path);
void write_keypoint_file(const std::filesystem::path& path, std::span<const DetectionRecord> records);

struct FrameDetections {
  long frame_index = 0;
  double timestamp = 0.0;  // global clock, seconds
  bool paired = false;     // matched to at least one other camera
  std::map<int, std::vector<Keypoint2D>> persons;
};

struct CameraTrack {
  std::string camera_id;
  double frame_rate = 0.0;
  double lag = 0.0;
  std::vector<FrameDetections> frames;  // strictly increasing frame_index
};

/// Frames of all cameras that show the same instant; `members[c]` indexes
/// into `cameras[c].frames`.
struct FrameGroup {
  long frame_index = 0;  // anchor camera frame index
  double timestamp = 0.0;
  std::vector<std::optional<std::size_t>> members;
};

struct DetectionTimeline {
  std::vector<CameraTrack> cameras;
  std::size_t anchor = 0;
  std::size_t n_keypoints = 0;
  std::vector<FrameGroup> groups;

  std::optional<std::size_t> camera_index(const std::string& id) const;
  std::vector<std::string> camera_ids() const;
  /// Nearest-timestamp frame pairs (index into cameras[i].frames, cameras[j].frames).
  std::vector<std::pair<std::size_t, std::size_t>> pair_frames(std::size_t cam_i, std::size_t cam_j) const;
};

/// Strict pairing tolerance: |dt| must stay below half the larger frame period
/// by at least this margin (seconds), so exact half-period offsets never pair.
inline constexpr double kPairingEpsilon = 1e-9;

/// Places detections on the global clock t = frame_index / f_r - lag and groups
/// frames across cameras by nearest timestamp. The anchor camera defines the
/// groups; by default it is `anchor_id` or the first camera id in sorted order.
/// Throws MissingLag, InconsistentFrameRate, InvalidDetections.
DetectionTimeline build_timeline(std::span<const DetectionRecord> records, std::size_t n_keypoints,
                                 const std::map<std::string, double>& lags,
                                 const std::map<std::string, double>& frame_rates,
                                 const std::optional<std::string>& anchor_id = std::nullopt);

struct Correspondence {
  std::size_t cam_i = 0;
  std::size_t cam_j = 0;
  Vec2 pixel_i = Vec2::Zero();
  Vec2 pixel_j = Vec2::Zero();
  double confidence = 0.0;  // sqrt(w_i * w_j)
  long frame_i = 0;
  long frame_j = 0;
  int person_id = 0;
  int keypoint_id = 0;
};

inline double pair_confidence(double w_i, double w_j) { return std::sqrt(w_i * w_j); }

/// Emits every same-person, same-keypoint correspondence of the paired frames
/// whose pair confidence exceeds tau. Throws NoSharedFrames.
std::vector<Correspondence> score_and_filter_pairs(const DetectionTimeline& timeline, std::size_t cam_i,
                                                   std::size_t cam_j, double tau);

/// Uniform sampling without replacement, deterministic for a seed. Output keeps
/// pool order. Throws EmptyPool.
std::vector<Correspondence> sample_correspondences(std::span<const Correspondence> pool, std::size_t budget,
                                                   std::uint64_t seed);

/// Index-level sampler shared by the correspondence and bundle point selection.
std::vector<std::size_t> sample_indices(std::size_t pool_size, std::size_t budget, std::uint64_t seed);

}  // namespace polycap

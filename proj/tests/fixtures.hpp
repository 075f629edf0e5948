#pragma once

#include "polycap/bundle.hpp"
#include "polycap/camgeom.hpp"
#include "polycap/keystore.hpp"
#include "polycap/pairwise.hpp"
#include "polycap/rng.hpp"
#include "polycap/synth.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fixtures {

using namespace polycap;

inline Vec3 random_unit(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

inline Mat3 random_rotation(Rng& rng, double max_angle = 3.14159) {
  return Eigen::AngleAxisd(rng.uniform(0.0, max_angle), random_unit(rng)).toRotationMatrix();
}

inline Mat3 rot_y(double deg) { return Eigen::AngleAxisd(deg * 3.14159265358979323846 / 180.0, Vec3::UnitY()).toRotationMatrix(); }

inline Intrinsics make_intrinsics(double f = 1000.0, int w = 1280, int h = 960) {
  return Intrinsics{f, f, 0.5 * w, 0.5 * h, w, h};
}

/// `n` cameras on a ring of `radius` at height 1.5 looking at (0, 0, 1).
inline std::vector<CameraModel> ring_cameras(std::size_t n, double radius = 3.0, double f = 1000.0) {
  std::vector<CameraModel> out;
  for (std::size_t c = 0; c < n; ++c) {
    const double az = 2.0 * 3.14159265358979323846 * static_cast<double>(c) / static_cast<double>(n) + 0.1;
    CameraModel cam;
    cam.id = synth_camera_id(c);
    cam.intrinsics = make_intrinsics(f);
    cam.pose = look_at_pose(Vec3(radius * std::cos(az), radius * std::sin(az), 1.5 + 0.1 * std::sin(3.0 * az)),
                            Vec3(0, 0, 1));
    out.push_back(cam);
  }
  return out;
}

inline std::vector<Vec3> random_points(Rng& rng, std::size_t n, const Vec3& lo, const Vec3& hi) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
  }
  return out;
}

struct TwoViewCase {
  Mat3 R;
  Vec3 t;  // unit
  std::vector<Correspondence> corrs;
  std::vector<bool> outlier;
  Intrinsics K = make_intrinsics();
};

/// Camera i at the origin, X_j = R X_i + baseline * t. Outliers are uniform
/// random pixels, redrawn while they happen to satisfy the true epipolar
/// geometry (true Sampson distance below 1e-4).
inline TwoViewCase two_view_case(std::uint64_t seed, std::size_t n, double sigma_px, double outlier_fraction,
                                 const Mat3& R, const Vec3& t_dir) {
  Rng rng(seed);
  TwoViewCase c;
  c.R = R;
  c.t = t_dir.normalized();
  const Vec3 t = 1.0 * c.t;
  const Mat3 E = skew(c.t) * R;
  const std::size_t n_out = static_cast<std::size_t>(std::llround(outlier_fraction * static_cast<double>(n)));
  for (std::size_t k = 0; k < n; ++k) {
    Correspondence corr;
    corr.cam_i = 0;
    corr.cam_j = 1;
    corr.confidence = 1.0;
    const bool is_out = k < n_out;
    if (!is_out) {
      const Vec3 X(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(4.0, 8.0));
      const Vec3 Xj = R * X + t;
      corr.pixel_i = c.K.to_pixel(Vec2(X.x() / X.z(), X.y() / X.z())) + sigma_px * Vec2(rng.normal(), rng.normal());
      corr.pixel_j =
          c.K.to_pixel(Vec2(Xj.x() / Xj.z(), Xj.y() / Xj.z())) + sigma_px * Vec2(rng.normal(), rng.normal());
    } else {
      do {
        corr.pixel_i = Vec2(rng.uniform(0, c.K.width), rng.uniform(0, c.K.height));
        corr.pixel_j = Vec2(rng.uniform(0, c.K.width), rng.uniform(0, c.K.height));
      } while (sampson_distance(E, c.K.to_normalized(corr.pixel_i), c.K.to_normalized(corr.pixel_j)) < 1e-4);
    }
    corr.keypoint_id = static_cast<int>(k);
    c.corrs.push_back(corr);
    c.outlier.push_back(is_out);
  }
  return c;
}

/// Like two_view_case, but inliers are spread over image i at depth U(depth_lo, depth_hi)
/// and kept only when image j sees them, as matched keypoints would be.
inline TwoViewCase rig_pair_case(std::uint64_t seed, std::size_t n, double sigma_px, double outlier_fraction,
                                 const Mat3& R, const Vec3& t_dir, double depth_lo, double depth_hi) {
  Rng rng(seed);
  TwoViewCase c;
  c.R = R;
  c.t = t_dir.normalized();
  const Mat3 E = skew(c.t) * R;
  const auto in_image = [&](const Vec2& p) { return p.x() >= 0 && p.y() >= 0 && p.x() < c.K.width && p.y() < c.K.height; };
  const std::size_t n_out = static_cast<std::size_t>(std::llround(outlier_fraction * static_cast<double>(n)));
  for (std::size_t k = 0; k < n; ++k) {
    Correspondence corr;
    corr.cam_i = 0;
    corr.cam_j = 1;
    corr.confidence = 1.0;
    const bool is_out = k < n_out;
    if (!is_out) {
      for (;;) {
        const Vec2 pi(rng.uniform(0, c.K.width), rng.uniform(0, c.K.height));
        const Vec2 ni = c.K.to_normalized(pi);
        const Vec3 Xj = R * (rng.uniform(depth_lo, depth_hi) * Vec3(ni.x(), ni.y(), 1.0)) + c.t;
        if (Xj.z() < 0.1) continue;
        const Vec2 pj = c.K.to_pixel(Vec2(Xj.x() / Xj.z(), Xj.y() / Xj.z()));
        if (!in_image(pj)) continue;
        corr.pixel_i = pi + sigma_px * Vec2(rng.normal(), rng.normal());
        corr.pixel_j = pj + sigma_px * Vec2(rng.normal(), rng.normal());
        break;
      }
    } else {
      do {
        corr.pixel_i = Vec2(rng.uniform(0, c.K.width), rng.uniform(0, c.K.height));
        corr.pixel_j = Vec2(rng.uniform(0, c.K.width), rng.uniform(0, c.K.height));
      } while (sampson_distance(E, c.K.to_normalized(corr.pixel_i), c.K.to_normalized(corr.pixel_j)) < 1e-4);
    }
    corr.keypoint_id = static_cast<int>(k);
    c.corrs.push_back(corr);
    c.outlier.push_back(is_out);
  }
  return c;
}

inline double angle_deg(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / 3.14159265358979323846;
}

inline double rotation_error_deg(const Mat3& a, const Mat3& b) {
  return rotation_angle_between(Quat(a), Quat(b)) * 180.0 / 3.14159265358979323846;
}

struct BaCase {
  BaProblem truth;     // ground-truth cameras and points
  BaProblem observed;  // same observations, cameras perturbed, points re-triangulated
};

/// Ring cameras with barrel distortion k1 viewing random points within `extent`
/// of (0, 0, 1). The points must reach the image periphery, otherwise k2 and k3
/// are unobservable and trade off against k1. Observations carry sigma_px noise and are kept only inside the
/// image; every point is seen at least twice. The observed problem perturbs
/// every camera except 0 by rot_deg and trans_frac of the baseline, scales all
/// focals by (1 + focal_frac), zeroes all distortion and re-triangulates.
inline BaCase ba_case(std::uint64_t seed, std::size_t n_cams, std::size_t n_points, double sigma_px, double k1,
                      double rot_deg, double trans_frac, double focal_frac, double extent = 1.2) {
  Rng rng(seed);
  BaCase c;
  c.truth.cameras = ring_cameras(n_cams);
  for (auto& cam : c.truth.cameras) cam.distortion.k1 = k1;
  while (c.truth.points.size() < n_points) {
    const Vec3 X(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(1.0 - extent, 1.0 + extent));
    std::vector<BaObservation> obs;
    for (std::size_t i = 0; i < n_cams; ++i) {
      const auto px = project_if_visible(X, c.truth.cameras[i]);
      if (!px) continue;
      const Vec2 noisy = *px + sigma_px * Vec2(rng.normal(), rng.normal());
      const auto& K = c.truth.cameras[i].intrinsics;
      if (noisy.x() < 0 || noisy.y() < 0 || noisy.x() > K.width || noisy.y() > K.height) continue;
      obs.push_back({i, c.truth.points.size(), noisy, rng.uniform(0.6, 1.0)});
    }
    if (obs.size() < 2) continue;
    c.truth.points.push_back(X);
    c.truth.observations.insert(c.truth.observations.end(), obs.begin(), obs.end());
  }
  c.observed = c.truth;
  if (rot_deg > 0 || trans_frac > 0 || focal_frac != 0) {
    c.observed.cameras = perturb_cameras(c.truth.cameras, rot_deg, trans_frac, focal_frac, 0.0, seed + 1, {0}).cameras;
    for (auto& cam : c.observed.cameras) cam.distortion = Distortion{};
    std::vector<std::vector<WeightedObservation>> views(n_points);
    for (const auto& o : c.observed.observations) {
      const auto& cam = c.observed.cameras[o.camera];
      views[o.point].push_back({o.camera, undistort_pixel(o.pixel, cam.intrinsics, cam.distortion), o.weight});
    }
    for (std::size_t m = 0; m < n_points; ++m) c.observed.points[m] = triangulate_weighted_dlt(views[m], c.observed.cameras);
  }
  return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("polycap_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Small synthetic scene that keeps tests fast.
inline SceneConfig small_scene(std::uint64_t seed) {
  SceneConfig c;
  c.seed = seed;
  c.n_frames = 200;
  c.depth_frames = 1;
  c.image_width = 640;
  c.image_height = 480;
  c.focal_range = {450.0, 550.0};
  c.lag_max = 0.4;
  return c;
}

}  // namespace fixtures

#include "fixtures.hpp"

#include "polycap/error.hpp"
#include "polycap/hashing.hpp"

#include <doctest.h>

#include <filesystem>

using namespace polycap;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> tree_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = sha256_file(e.path());
  }
  return out;
}

const CameraModel& camera_by_id(const SyntheticScene& s, const std::string& id) {
  for (const auto& c : s.cameras)
    if (c.id == id) return c;
  throw std::logic_error("unknown camera " + id);
}

}  // namespace

TEST_CASE("a seed fully determines the dataset") {
  SceneConfig cfg = fixtures::small_scene(3);
  cfg.n_frames = 80;
  const auto a = fixtures::temp_dir("synth_a");
  const auto b = fixtures::temp_dir("synth_b");
  write_dataset(generate_scene(cfg), a);
  write_dataset(generate_scene(cfg), b);
  const auto ha = tree_hashes(a);
  CHECK(ha.size() > 10);
  CHECK(ha == tree_hashes(b));
  CHECK(ha.count("cameras_init.json") == 1);
  CHECK(ha.count("ground_truth/cameras.json") == 1);
  cfg.seed = 4;
  const auto c = fixtures::temp_dir("synth_c");
  write_dataset(generate_scene(cfg), c);
  CHECK(tree_hashes(c) != ha);
}

TEST_CASE("occlusion rate matches within three binomial sigmas") {
  SceneConfig cfg = fixtures::small_scene(5);
  cfg.occlusion_rate = 0.3;
  cfg.audio = false;
  cfg.depth_frames = 0;
  const SyntheticScene s = generate_scene(cfg);
  const double n = static_cast<double>(s.total_samples);
  REQUIRE(n > 1000);
  const double sigma = std::sqrt(n * 0.3 * 0.7);
  CHECK(std::abs(static_cast<double>(s.occluded_samples) - 0.3 * n) < 3.0 * sigma);
}

TEST_CASE("noiseless detections reproject exactly") {
  SceneConfig cfg = fixtures::small_scene(6);
  cfg.noise_px = 0.0;
  cfg.occlusion_rate = 0.0;
  cfg.audio = false;
  cfg.depth_frames = 0;
  const SyntheticScene s = generate_scene(cfg);
  std::size_t checked = 0;
  for (const auto& rec : s.detections) {
    const CameraModel& cam = camera_by_id(s, rec.camera_id);
    const double t = static_cast<double>(rec.frame_index) / cfg.frame_rate - s.lags.at(rec.camera_id);
    const Eigen::MatrixXd J = s.joints_at(rec.person_id, t);
    for (std::size_t k = 0; k < rec.keypoints.size(); ++k) {
      if (rec.keypoints[k].confidence == 0.0) continue;
      const Vec3 X = J.row(static_cast<Eigen::Index>(k)).transpose();
      CHECK((project(X, cam) - rec.keypoints[k].position).norm() < 1e-9);
      ++checked;
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("confidence falls with the detection noise") {
  SceneConfig cfg = fixtures::small_scene(7);
  cfg.occlusion_rate = 0.0;
  cfg.noise_px = 3.0;
  cfg.audio = false;
  cfg.depth_frames = 0;
  const SyntheticScene s = generate_scene(cfg);
  // Mean confidence of small versus large errors.
  double lo = 0, hi = 0;
  int nlo = 0, nhi = 0;
  for (const auto& rec : s.detections) {
    const CameraModel& cam = camera_by_id(s, rec.camera_id);
    const Eigen::MatrixXd J = s.joints_at(rec.person_id, rec.frame_index / cfg.frame_rate - s.lags.at(rec.camera_id));
    for (std::size_t k = 0; k < rec.keypoints.size(); ++k) {
      if (rec.keypoints[k].confidence == 0.0) continue;
      const double e = (project(J.row(static_cast<Eigen::Index>(k)).transpose(), cam) - rec.keypoints[k].position).norm();
      if (e < 2.0) lo += rec.keypoints[k].confidence, ++nlo;
      if (e > 6.0) hi += rec.keypoints[k].confidence, ++nhi;
    }
  }
  REQUIRE(nlo > 0);
  REQUIRE(nhi > 0);
  CHECK(lo / nlo > hi / nhi + 0.2);
}

TEST_CASE("depth maps hold the joint depth at its pixel") {
  SceneConfig cfg = fixtures::small_scene(8);
  cfg.depth_frames = 2;
  cfg.audio = false;
  const SyntheticScene s = generate_scene(cfg);
  std::size_t exact = 0, covered = 0;
  for (const auto& [id, frames] : s.depth) {
    const CameraModel& cam = camera_by_id(s, id);
    REQUIRE(frames.size() == 2);
    for (const auto& [k, map] : frames) {
      CHECK(map.width == cam.intrinsics.width);
      const double t = static_cast<double>(k) / cfg.frame_rate - s.lags.at(id);
      const Eigen::MatrixXd J = s.joints_at(0, t);
      for (Eigen::Index j = 0; j < J.rows(); ++j) {
        const Vec3 X = J.row(j).transpose();
        const auto px = project_if_visible(X, cam);
        if (!px || px->x() < 0 || px->y() < 0 || px->x() > cam.intrinsics.width - 1 || px->y() > cam.intrinsics.height - 1) continue;
        const double d = map.sample_nearest(*px);
        const double z = cam.pose.apply(X).z();
        if (std::abs(d - z) < 1e-6 * z) {
          ++exact;
          continue;
        }
        // Otherwise a nearer disc of another joint covers the pixel.
        CHECK(d < z);
        bool found = false;
        for (Eigen::Index o = 0; o < J.rows(); ++o) {
          if (std::abs(cam.pose.apply(J.row(o).transpose()).z() - d) < 1e-6 * d) found = true;
        }
        CHECK(found);
        ++covered;
      }
    }
  }
  CHECK(exact > 5 * covered);
}

TEST_CASE("ground truth covers only frames every camera records") {
  SceneConfig cfg = fixtures::small_scene(9);
  cfg.audio = false;
  cfg.depth_frames = 0;
  const SyntheticScene s = generate_scene(cfg);
  REQUIRE_FALSE(s.ground_truth.frames.empty());
  double lo = -1e9, hi = 1e9;
  for (const auto& [id, lag] : s.lags) {
    lo = std::max(lo, -lag);
    hi = std::min(hi, (cfg.n_frames - 1) / cfg.frame_rate - lag);
  }
  for (const auto& f : s.ground_truth.frames) {
    CHECK(f.timestamp >= lo - 1e-9);
    CHECK(f.timestamp <= hi + 1e-9);
    CHECK(f.joints.size() == 17);
  }
  CHECK(s.lags.at(synth_camera_id(0)) == 0.0);
}

TEST_CASE("perturbations have the requested magnitudes") {
  const auto cams = fixtures::ring_cameras(5);
  const PerturbedCameras none = perturb_cameras(cams, 0, 0, 0, 0, 1);
  for (std::size_t i = 0; i < cams.size(); ++i) {
    CHECK(none.cameras[i].pose.rotation.coeffs() == cams[i].pose.rotation.coeffs());
    CHECK((none.cameras[i].pose.translation - cams[i].pose.translation).norm() < 1e-12);
    CHECK(none.cameras[i].intrinsics.fx == cams[i].intrinsics.fx);
  }

  const PerturbedCameras p = perturb_cameras(cams, 2.0, 0.05, 0.1, 0.01, 2, {0});
  CHECK(p.baseline > 0);
  CHECK(p.cameras[0].pose.rotation.coeffs() == cams[0].pose.rotation.coeffs());
  CHECK(p.cameras[0].pose.translation == cams[0].pose.translation);
  for (std::size_t i = 1; i < cams.size(); ++i) {
    CHECK(fixtures::rotation_error_deg(p.cameras[i].pose.R(), cams[i].pose.R()) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK((p.cameras[i].pose.center() - cams[i].pose.center()).norm() == doctest::Approx(0.05 * p.baseline).epsilon(1e-9));
    CHECK(p.perturbations[i].center_offset.norm() == doctest::Approx(0.05 * p.baseline).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < cams.size(); ++i) {
    CHECK(p.cameras[i].intrinsics.fx == doctest::Approx(1.1 * cams[i].intrinsics.fx));
    CHECK(std::abs(p.cameras[i].distortion.k1 - cams[i].distortion.k1) <= 0.01);
  }
  CHECK_THROWS_AS(perturb_cameras(cams, -1.0, 0, 0, 0, 1), Error);
}

TEST_CASE("scene configs are strict") {
  SceneConfig cfg;
  const auto j = cfg.to_json();
  CHECK(SceneConfig::from_json(j).to_json() == j);
  auto bad = j;
  bad["n_cameraz"] = 3;
  try {
    SceneConfig::from_json(bad);
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
    CHECK(std::string(e.what()).find("n_cameraz") != std::string::npos);
  }
  cfg.n_cameras = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = SceneConfig{};
  cfg.occlusion_rate = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

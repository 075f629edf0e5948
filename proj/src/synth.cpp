#include "polycap/synth.hpp"

#include "polycap/camera_io.hpp"
#include "polycap/config_reader.hpp"
#include "polycap/error.hpp"
#include "polycap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace polycap {

namespace {

constexpr std::size_t kMotionParams = 16;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::InvalidConfig, "scene config: " + what);
}

void require_range(const std::array<double, 2>& r, const std::string& name) {
  require(std::isfinite(r[0]) && std::isfinite(r[1]) && r[0] <= r[1], name + " must be an ordered finite range");
}

Mat3 rot_about(const Vec3& axis, double angle) { return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(); }

void rotate_joints(Eigen::MatrixXd& J, std::initializer_list<int> joints, const Vec3& pivot, const Mat3& R) {
  for (int k : joints) {
    const Vec3 p = J.row(k).transpose();
    J.row(k) = (pivot + R * (p - pivot)).transpose();
  }
}

Vec3 row(const Eigen::MatrixXd& J, int k) { return J.row(k).transpose(); }

}  // namespace

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  SceneConfig c;
  ConfigReader r(j, "synth");
  r.read("n_cameras", c.n_cameras);
  r.read("ring_radius", c.ring_radius);
  r.read("camera_height", c.camera_height);
  r.read("height_jitter", c.height_jitter);
  r.read("azimuth_jitter_deg", c.azimuth_jitter_deg);
  std::array<double, 3> look{c.look_at.x(), c.look_at.y(), c.look_at.z()};
  r.read("look_at", look);
  c.look_at = Vec3(look[0], look[1], look[2]);
  r.read("image_width", c.image_width);
  r.read("image_height", c.image_height);
  r.read("focal_range", c.focal_range);
  r.read("k1_range", c.k1_range);
  r.read("k2_range", c.k2_range);
  r.read("k3_range", c.k3_range);
  r.read("p_range", c.p_range);
  r.read("n_frames", c.n_frames);
  r.read("frame_rate", c.frame_rate);
  r.read("n_persons", c.n_persons);
  r.read("person_spacing", c.person_spacing);
  r.read("beta_sigma", c.beta_sigma);
  r.read("n_shape", c.n_shape);
  r.read("wander_radius", c.wander_radius);
  r.read("noise_px", c.noise_px);
  r.read("confidence_scale", c.confidence_scale);
  r.read("confidence_jitter", c.confidence_jitter);
  r.read("occlusion_rate", c.occlusion_rate);
  r.read("occluded_noise_px", c.occluded_noise_px);
  r.read("occluded_confidence_max", c.occluded_confidence_max);
  r.read("lag_max", c.lag_max);
  r.read("audio", c.audio);
  r.read("audio_sample_rate", c.audio_sample_rate);
  r.read("audio_noise", c.audio_noise);
  r.read("depth_frames", c.depth_frames);
  r.read("joint_radius", c.joint_radius);
  r.read("initial_focal_error", c.initial_focal_error);
  r.read("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

nlohmann::json SceneConfig::to_json() const {
  return {{"n_cameras", n_cameras},
          {"ring_radius", ring_radius},
          {"camera_height", camera_height},
          {"height_jitter", height_jitter},
          {"azimuth_jitter_deg", azimuth_jitter_deg},
          {"look_at", {look_at.x(), look_at.y(), look_at.z()}},
          {"image_width", image_width},
          {"image_height", image_height},
          {"focal_range", focal_range},
          {"k1_range", k1_range},
          {"k2_range", k2_range},
          {"k3_range", k3_range},
          {"p_range", p_range},
          {"n_frames", n_frames},
          {"frame_rate", frame_rate},
          {"n_persons", n_persons},
          {"person_spacing", person_spacing},
          {"beta_sigma", beta_sigma},
          {"n_shape", n_shape},
          {"wander_radius", wander_radius},
          {"noise_px", noise_px},
          {"confidence_scale", confidence_scale},
          {"confidence_jitter", confidence_jitter},
          {"occlusion_rate", occlusion_rate},
          {"occluded_noise_px", occluded_noise_px},
          {"occluded_confidence_max", occluded_confidence_max},
          {"lag_max", lag_max},
          {"audio", audio},
          {"audio_sample_rate", audio_sample_rate},
          {"audio_noise", audio_noise},
          {"depth_frames", depth_frames},
          {"joint_radius", joint_radius},
          {"initial_focal_error", initial_focal_error},
          {"seed", seed}};
}

void SceneConfig::validate() const {
  require(n_cameras >= 2 && n_cameras <= 100, "n_cameras must be in [2, 100]");
  require(ring_radius > 0 && std::isfinite(ring_radius), "ring_radius must be positive");
  require(height_jitter >= 0 && azimuth_jitter_deg >= 0, "jitters must be non-negative");
  require(camera_height > 0, "camera_height must be positive");
  require(image_width > 0 && image_height > 0, "image size must be positive");
  require_range(focal_range, "focal_range");
  require(focal_range[0] > 0, "focal lengths must be positive");
  require_range(k1_range, "k1_range");
  require_range(k2_range, "k2_range");
  require_range(k3_range, "k3_range");
  require_range(p_range, "p_range");
  require(n_frames >= 1, "n_frames must be positive");
  require(frame_rate > 0 && std::isfinite(frame_rate), "frame_rate must be positive");
  require(n_persons >= 1, "n_persons must be positive");
  require(person_spacing >= 0 && beta_sigma >= 0 && wander_radius >= 0, "motion magnitudes must be non-negative");
  require(n_shape >= 1 && n_shape <= 12, "n_shape must be in [1, 12]");
  require(noise_px >= 0 && occluded_noise_px >= 0, "noise must be non-negative");
  require(confidence_scale > 0 && confidence_jitter >= 0, "confidence model parameters out of range");
  require(occlusion_rate >= 0 && occlusion_rate <= 1, "occlusion_rate must be in [0, 1]");
  require(occluded_confidence_max >= 0 && occluded_confidence_max <= 1, "occluded_confidence_max must be in [0, 1]");
  require(lag_max >= 0 && std::isfinite(lag_max), "lag_max must be non-negative");
  require(audio_sample_rate > 0 && audio_noise >= 0, "audio parameters out of range");
  require(joint_radius > 0, "joint_radius must be positive");
  require(initial_focal_error >= 0 && initial_focal_error < 1, "initial_focal_error must be in [0, 1)");
}

std::string synth_camera_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "cam%02zu", index);
  return buf;
}

Pose look_at_pose(const Vec3& position, const Vec3& target) {
  const Vec3 forward = (target - position).normalized();
  Vec3 right = forward.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) fail(ErrorCode::DegenerateConfiguration, "camera looks straight up or down");
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = forward.transpose();
  return Pose::from_rt(R, -R * position);
}

Eigen::MatrixXd SyntheticScene::joints_at(int person, double t) const {
  const double* ph = &person_phases.at(static_cast<std::size_t>(person) * kMotionParams);
  Eigen::MatrixXd J = prior.joints(betas.at(person));
  const double s = config.wander_radius;
  const Vec3 lateral = Vec3::UnitX();

  // Distal segments first, in the rest frame, so parents carry them rigidly.
  const double walk = kTwoPi * 0.8 * t;
  const double arm = kTwoPi * 0.6 * t;
  for (int side = 0; side < 2; ++side) {
    const int sh = 5 + side, el = 7 + side, wr = 9 + side;
    const int hip = 11 + side, knee = 13 + side, ankle = 15 + side;
    const double mirror = side == 0 ? 1.0 : -1.0;
    const double outward = row(J, sh).x() >= row(J, 6 - side).x() ? 1.0 : -1.0;

    const double elbow_flex = 0.2 + 0.4 * (1.0 + std::sin(arm + ph[0] + side));
    rotate_joints(J, {wr}, row(J, el), rot_about(lateral, elbow_flex));
    const double swing = 0.6 * mirror * std::sin(arm + ph[1]);
    const double abduct = 0.15 + 0.175 * (1.0 + std::sin(kTwoPi * 0.37 * t + ph[2] + side));
    const Mat3 R_sh = rot_about(lateral, swing) * rot_about(Vec3::UnitY(), -outward * abduct);
    rotate_joints(J, {el, wr}, row(J, sh), R_sh);

    const double knee_flex = -(0.1 + 0.35 * (1.0 + std::sin(walk + ph[3] + std::numbers::pi * side)));
    rotate_joints(J, {ankle}, row(J, knee), rot_about(lateral, knee_flex));
    const double hip_swing = 0.45 * mirror * std::sin(walk + ph[4]);
    rotate_joints(J, {knee, ankle}, row(J, hip), rot_about(lateral, hip_swing));
  }

  const Vec3 neck = 0.5 * (row(J, 5) + row(J, 6));
  const Mat3 R_head = rot_about(Vec3::UnitZ(), 0.5 * std::sin(kTwoPi * 0.3 * t + ph[5])) *
                      rot_about(lateral, 0.2 * std::sin(kTwoPi * 0.45 * t + ph[6]));
  rotate_joints(J, {0, 1, 2, 3, 4}, neck, R_head);

  // Lean about the hip axis keeps the torso-to-hip bones intact.
  const Vec3 hip_axis = row(J, 11) - row(J, 12);
  const double lean = 0.15 * std::sin(kTwoPi * 0.25 * t + ph[7]);
  rotate_joints(J, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, row(J, 11), rot_about(hip_axis, lean));

  const double yaw = ph[8] + 1.2 * std::sin(kTwoPi * 0.05 * t + ph[9]);
  const double w1 = kTwoPi * 0.05, w2 = kTwoPi * 0.11, w3 = kTwoPi * 0.23;
  const Vec3 wander(0.5 * s * std::cos(w1 * t + ph[10]) + 0.3 * s * std::cos(w2 * t + ph[11]) +
                        0.2 * s * std::cos(w3 * t + ph[12]),
                    0.5 * s * std::sin(w1 * t + ph[10]) + 0.3 * s * std::sin(w2 * t + ph[11]) +
                        0.2 * s * std::sin(w3 * t + ph[12]),
                    0.0);
  const Mat3 R_yaw = rot_about(Vec3::UnitZ(), yaw);
  const Vec3 offset = person_anchor.at(static_cast<std::size_t>(person)) + wander;
  for (Eigen::Index k = 0; k < J.rows(); ++k) J.row(k) = (R_yaw * J.row(k).transpose() + offset).transpose();
  return J;
}

DepthMap render_depth(const CameraModel& camera, const std::vector<Eigen::MatrixXd>& persons, double joint_radius) {
  const Intrinsics& K = camera.intrinsics;
  DepthMap map(K.width, K.height, std::numeric_limits<float>::quiet_NaN());
  const Mat3 Rt = camera.pose.R().transpose();
  const Vec3 C = camera.pose.center();
  std::vector<double> zbuf(map.values.size(), std::numeric_limits<double>::infinity());
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const auto ideal = try_undistort_normalized(K.to_normalized(Vec2(u, v)), camera.distortion);
      if (!ideal) continue;  // outside the range of the lens model
      const Vec2 n = *ideal;
      const Vec3 ray = Rt * Vec3(n.x(), n.y(), 1.0);  // camera z = 1 along the ray
      if (!(ray.z() < 0) || !(C.z() > 0)) continue;
      zbuf[static_cast<std::size_t>(v) * K.width + u] = -C.z() / ray.z();
    }
  }
  for (const auto& J : persons) {
    for (Eigen::Index k = 0; k < J.rows(); ++k) {
      const Vec3 Xc = camera.pose.apply(J.row(k).transpose());
      if (!(Xc.z() > joint_radius)) continue;
      const Vec2 p = project(J.row(k).transpose(), camera);
      const double r = K.fx * joint_radius / Xc.z();
      const int u0 = std::max(0, static_cast<int>(std::floor(p.x() - r)));
      const int u1 = std::min(K.width - 1, static_cast<int>(std::ceil(p.x() + r)));
      const int v0 = std::max(0, static_cast<int>(std::floor(p.y() - r)));
      const int v1 = std::min(K.height - 1, static_cast<int>(std::ceil(p.y() + r)));
      for (int v = v0; v <= v1; ++v) {
        for (int u = u0; u <= u1; ++u) {
          if ((Vec2(u, v) - p).norm() > r) continue;
          double& z = zbuf[static_cast<std::size_t>(v) * K.width + u];
          z = std::min(z, Xc.z());
        }
      }
    }
  }
  for (std::size_t i = 0; i < zbuf.size(); ++i) {
    if (std::isfinite(zbuf[i])) map.values[i] = static_cast<float>(zbuf[i]);
  }
  return map;
}

SyntheticScene generate_scene(const SceneConfig& config) {
  config.validate();
  SyntheticScene scene;
  scene.config = config;
  Rng rng(config.seed);

  scene.prior = make_reference_prior(config.n_shape);
  scene.skeleton.names = scene.prior.names;
  scene.skeleton.bones = scene.prior.bones;

  // Rig.
  for (std::size_t c = 0; c < config.n_cameras; ++c) {
    CameraModel cam;
    cam.id = synth_camera_id(c);
    const double az = kTwoPi * static_cast<double>(c) / static_cast<double>(config.n_cameras) +
                      rng.uniform(-1.0, 1.0) * config.azimuth_jitter_deg * std::numbers::pi / 180.0;
    const double h = config.camera_height + rng.uniform(-1.0, 1.0) * config.height_jitter;
    cam.pose = look_at_pose(Vec3(config.ring_radius * std::cos(az), config.ring_radius * std::sin(az), h),
                            config.look_at);
    const double f = rng.uniform(config.focal_range[0], config.focal_range[1]);
    cam.intrinsics = Intrinsics{f, f, 0.5 * config.image_width, 0.5 * config.image_height, config.image_width,
                                config.image_height};
    cam.distortion.k1 = rng.uniform(config.k1_range[0], config.k1_range[1]);
    cam.distortion.k2 = rng.uniform(config.k2_range[0], config.k2_range[1]);
    cam.distortion.k3 = rng.uniform(config.k3_range[0], config.k3_range[1]);
    cam.distortion.p1 = rng.uniform(config.p_range[0], config.p_range[1]);
    cam.distortion.p2 = rng.uniform(config.p_range[0], config.p_range[1]);
    try {
      validate_camera(cam);
    } catch (const Error& e) {
      fail(ErrorCode::InvalidConfig, std::string("scene config produces an invalid camera: ") + e.what());
    }
    CameraModel init = cam;
    init.pose = Pose{};
    init.distortion = Distortion{};
    const double f0 = f * (1.0 + rng.uniform(-1.0, 1.0) * config.initial_focal_error);
    init.intrinsics.fx = init.intrinsics.fy = f0;
    scene.cameras.push_back(cam);
    scene.initial_cameras.push_back(init);
  }

  // Lags are whole frames so every camera shares the reference frame grid.
  for (std::size_t c = 0; c < config.n_cameras; ++c) {
    const double lag = c == 0 ? 0.0 : std::round(rng.uniform(-1.0, 1.0) * config.lag_max * config.frame_rate) /
                                          config.frame_rate;
    scene.lags[scene.cameras[c].id] = lag;
  }

  // Persons.
  for (std::size_t p = 0; p < config.n_persons; ++p) {
    Eigen::VectorXd beta(static_cast<Eigen::Index>(config.n_shape));
    for (Eigen::Index i = 0; i < beta.size(); ++i) beta(i) = config.beta_sigma * rng.normal();
    scene.betas[static_cast<int>(p)] = beta;
    for (std::size_t i = 0; i < kMotionParams; ++i) scene.person_phases.push_back(rng.uniform(0.0, kTwoPi));
    const double x = (static_cast<double>(p) - 0.5 * static_cast<double>(config.n_persons - 1)) * config.person_spacing;
    scene.person_anchor.emplace_back(x, 0.0, 0.0);
  }
  const std::size_t K = scene.prior.n_joints();

  // Detections.
  for (std::size_t c = 0; c < config.n_cameras; ++c) {
    const CameraModel& cam = scene.cameras[c];
    const double lag = scene.lags.at(cam.id);
    for (std::size_t k = 0; k < config.n_frames; ++k) {
      const double t_local = static_cast<double>(k) / config.frame_rate;
      const double t = t_local - lag;
      for (std::size_t p = 0; p < config.n_persons; ++p) {
        const Eigen::MatrixXd J = scene.joints_at(static_cast<int>(p), t);
        DetectionRecord rec;
        rec.camera_id = cam.id;
        rec.frame_index = static_cast<long>(k);
        rec.person_id = static_cast<int>(p);
        rec.timestamp = t_local;
        for (std::size_t j = 0; j < K; ++j) {
          const bool occluded = rng.bernoulli(config.occlusion_rate);
          const Vec2 g(rng.normal(), rng.normal());
          const double jitter = rng.uniform(-1.0, 1.0) * config.confidence_jitter;
          const double occluded_w = rng.uniform(0.0, config.occluded_confidence_max);
          ++scene.total_samples;
          Keypoint2D kp;
          const Vec3 X = J.row(static_cast<Eigen::Index>(j)).transpose();
          const auto pix = project_if_visible(X, cam);
          if (!pix) {
            rec.keypoints.push_back(kp);
            continue;
          }
          const bool inside = pix->x() >= 0 && pix->y() >= 0 && pix->x() < cam.intrinsics.width &&
                              pix->y() < cam.intrinsics.height;
          if (occluded) {
            ++scene.occluded_samples;
            kp.position = *pix + config.occluded_noise_px * g;
            kp.confidence = occluded_w;
          } else {
            const Vec2 noise = config.noise_px * g;
            const double base = config.noise_px > 0
                                    ? std::exp(-noise.norm() / (config.confidence_scale * config.noise_px))
                                    : 1.0;
            kp.position = *pix + noise;
            kp.confidence = std::clamp(base + jitter, 0.0, 1.0);
          }
          if (!inside) kp.confidence = 0.0;
          rec.keypoints.push_back(kp);
        }
        scene.detections.push_back(std::move(rec));
      }
    }
  }

  // Ground truth on the reference camera clock, limited to instants that
  // every camera records.
  const double lag0 = scene.lags.at(scene.cameras[0].id);
  const double last = static_cast<double>(config.n_frames - 1);
  for (std::size_t k = 0; k < config.n_frames; ++k) {
    const double t = static_cast<double>(k) / config.frame_rate - lag0;
    const bool covered = std::all_of(scene.lags.begin(), scene.lags.end(), [&](const auto& entry) {
      const double local = std::round((t + entry.second) * config.frame_rate);
      return local >= 0 && local <= last;
    });
    if (!covered) continue;
    for (std::size_t p = 0; p < config.n_persons; ++p) {
      const Eigen::MatrixXd J = scene.joints_at(static_cast<int>(p), t);
      SkeletonFrame f;
      f.frame_index = static_cast<long>(k);
      f.timestamp = t;
      f.person_id = static_cast<int>(p);
      for (std::size_t j = 0; j < K; ++j) {
        f.joints.push_back(JointEstimate{J.row(static_cast<Eigen::Index>(j)).transpose(), 1.0, true});
      }
      scene.ground_truth.frames.push_back(std::move(f));
    }
  }

  // Audio: one broadband source on the global clock, delayed per camera.
  if (config.audio) {
    const double fs = config.audio_sample_rate;
    const auto n_audio = static_cast<long>(std::llround(static_cast<double>(config.n_frames) / config.frame_rate * fs));
    long lmin = 0, lmax = 0;
    std::vector<long> lag_samples;
    for (const auto& cam : scene.cameras) {
      lag_samples.push_back(std::lround(scene.lags.at(cam.id) * fs));
      lmin = std::min(lmin, lag_samples.back());
      lmax = std::max(lmax, lag_samples.back());
    }
    const long n_src = n_audio + lmax - lmin;
    std::vector<double> src(static_cast<std::size_t>(n_src));
    double level = rng.uniform(0.05, 1.0), target = level;
    long remaining = 0;
    const double ramp = 1.0 / (0.01 * fs);
    for (auto& s : src) {
      if (remaining-- <= 0) {
        target = rng.uniform(0.05, 1.0);
        remaining = std::lround(rng.uniform(0.05, 0.4) * fs);
      }
      level += std::clamp(target - level, -ramp, ramp);
      s = 0.25 * level * rng.normal();
    }
    for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
      AudioTrack track;
      track.sample_rate = fs;
      track.samples.resize(static_cast<std::size_t>(n_audio));
      // track_c[n] = src(n / fs - lag_c); src index 0 sits at global sample -lmax.
      const long shift = lmax - lag_samples[c];
      for (long n = 0; n < n_audio; ++n) {
        const double v = src[static_cast<std::size_t>(n + shift)] + config.audio_noise * rng.normal();
        track.samples[static_cast<std::size_t>(n)] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
      scene.audio[scene.cameras[c].id] = std::move(track);
    }
  }

  // Depth maps at evenly spaced local frames.
  for (std::size_t c = 0; c < config.n_cameras && config.depth_frames > 0; ++c) {
    const CameraModel& cam = scene.cameras[c];
    for (std::size_t d = 0; d < config.depth_frames; ++d) {
      const long k = static_cast<long>((d + 1) * config.n_frames / (config.depth_frames + 1));
      const double t = static_cast<double>(k) / config.frame_rate - scene.lags.at(cam.id);
      std::vector<Eigen::MatrixXd> persons;
      for (std::size_t p = 0; p < config.n_persons; ++p) persons.push_back(scene.joints_at(static_cast<int>(p), t));
      scene.depth[cam.id][k] = render_depth(cam, persons, config.joint_radius);
    }
  }
  return scene;
}

void write_dataset(const SyntheticScene& scene, const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory / "keypoints");
  fs::create_directories(directory / "ground_truth");

  CameraSet init{"scene", scene.initial_cameras};
  write_camera_file(directory / "cameras_init.json", init);
  write_skeleton_file(directory / "skeleton.json", scene.skeleton);
  write_shape_prior(directory / "shape_prior.json", scene.prior);

  for (const auto& cam : scene.cameras) {
    std::vector<DetectionRecord> recs;
    for (const auto& r : scene.detections) {
      if (r.camera_id == cam.id) recs.push_back(r);
    }
    write_keypoint_file(directory / "keypoints" / (cam.id + ".jsonl"), recs);
  }
  if (!scene.audio.empty()) {
    fs::create_directories(directory / "audio");
    for (const auto& [id, track] : scene.audio) write_wav(directory / "audio" / (id + ".wav"), track);
  }
  for (const auto& [id, frames] : scene.depth) {
    fs::create_directories(directory / "depth" / id);
    for (const auto& [k, map] : frames) write_depth_map(directory / "depth" / id / (std::to_string(k) + ".kdm"), map);
  }

  CameraSet gt{"meters", scene.cameras};
  write_camera_file(directory / "ground_truth" / "cameras.json", gt);
  write_skeleton_sequence(directory / "ground_truth" / "skeletons.jsonl", scene.ground_truth);
  nlohmann::json betas = nlohmann::json::object();
  for (const auto& [p, b] : scene.betas) betas[std::to_string(p)] = std::vector<double>(b.data(), b.data() + b.size());
  const nlohmann::json info = {{"config", scene.config.to_json()},
                               {"lags", scene.lags},
                               {"reference_camera", scene.cameras.front().id},
                               {"betas", betas},
                               {"occluded_samples", scene.occluded_samples},
                               {"total_samples", scene.total_samples}};
  write_json_file(directory / "ground_truth" / "scene.json", info);
}

PerturbedCameras perturb_cameras(std::span<const CameraModel> cameras, double rot_deg, double trans_frac,
                                 double focal_frac, double dist_delta, std::uint64_t seed,
                                 const std::vector<std::size_t>& fixed) {
  if (!(rot_deg >= 0) || !(trans_frac >= 0) || !(dist_delta >= 0) || !std::isfinite(focal_frac) ||
      !(focal_frac > -1.0)) {
    fail(ErrorCode::InvalidConfig, "perturbation magnitudes must be non-negative");
  }
  PerturbedCameras out;
  const std::size_t n = cameras.size();
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      out.baseline += (cameras[i].pose.center() - cameras[j].pose.center()).norm();
      ++pairs;
    }
  }
  if (pairs > 0) out.baseline /= static_cast<double>(pairs);

  Rng rng(seed);
  const auto random_unit = [&] {
    Vec3 v;
    do {
      v = Vec3(rng.normal(), rng.normal(), rng.normal());
    } while (v.norm() < 1e-6);
    return Vec3(v.normalized());
  };
  for (std::size_t i = 0; i < n; ++i) {
    CameraPerturbation p;
    p.rotation_axis = random_unit();
    const Vec3 offset_dir = random_unit();
    for (double& d : p.distortion_delta) d = rng.uniform(-1.0, 1.0) * dist_delta;
    const bool keep_pose = std::find(fixed.begin(), fixed.end(), i) != fixed.end();
    if (!keep_pose) {
      p.rotation_rad = rot_deg * std::numbers::pi / 180.0;
      p.center_offset = trans_frac * out.baseline * offset_dir;
    }
    p.focal_scale = 1.0 + focal_frac;

    CameraModel cam = cameras[i];
    if (!keep_pose && (p.rotation_rad > 0 || trans_frac > 0)) {
      const Vec3 C = cam.pose.center() + p.center_offset;
      const Mat3 R = rot_about(p.rotation_axis, p.rotation_rad) * cam.pose.R();
      cam.pose = Pose::from_rt(R, -R * C);
    }
    cam.intrinsics.fx *= p.focal_scale;
    cam.intrinsics.fy *= p.focal_scale;
    if (dist_delta > 0) {
      cam.distortion.k1 += p.distortion_delta[0];
      cam.distortion.k2 += p.distortion_delta[1];
      cam.distortion.k3 += p.distortion_delta[2];
      cam.distortion.p1 += p.distortion_delta[3];
      cam.distortion.p2 += p.distortion_delta[4];
    }
    out.cameras.push_back(cam);
    out.perturbations.push_back(p);
  }
  return out;
}

}  // namespace polycap

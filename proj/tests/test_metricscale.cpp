#include "fixtures.hpp"

#include "polycap/error.hpp"
#include "polycap/metricscale.hpp"
#include "polycap/raster_io.hpp"
#include "polycap/shape_prior.hpp"

#include <doctest.h>

using namespace polycap;

namespace {

struct Rigid {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  Vec3 operator()(const Vec3& x) const { return R * x + t; }
};

Rigid random_rigid(Rng& rng) {
  return {fixtures::random_rotation(rng), Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3))};
}

/// Joint matrix as a single fully confident frame, mapped by `scale * rigid(x)`.
SkeletonSequence as_sequence(const Eigen::MatrixXd& joints, double scale = 1.0, const Rigid& rigid = {}, int person = 0) {
  SkeletonFrame f;
  f.person_id = person;
  for (Eigen::Index k = 0; k < joints.rows(); ++k) {
    f.joints.push_back({scale * rigid(joints.row(k).transpose()), 1.0, true});
  }
  SkeletonSequence s;
  s.frames.push_back(f);
  return s;
}

/// Camera looking down +z from the origin.
CameraModel identity_camera(int w = 64, int h = 48) {
  CameraModel cam;
  cam.id = "c";
  cam.intrinsics = fixtures::make_intrinsics(100.0, w, h);
  return cam;
}

DepthCandidate candidate(std::size_t camera, const DepthMap* depth, const std::vector<Vec3>& joints,
                         const CameraModel& cam, double conf = 1.0) {
  DepthCandidate c;
  c.camera = camera;
  c.depth = depth;
  c.joints = joints;
  for (const Vec3& X : joints) c.detections.push_back({project(X, cam), conf});
  return c;
}

/// Cameras and joints of a metric scene expressed in units where a metre is `1 / s`.
struct OracleDepthScene {
  std::vector<CameraModel> metric_cameras, cameras;
  std::vector<DepthMap> depth;
  std::vector<Vec3> metric_joints;
};

OracleDepthScene oracle_depth_scene(std::uint64_t seed) {
  Rng rng(seed);
  OracleDepthScene s;
  s.metric_cameras = fixtures::ring_cameras(4, 3.0, 300.0);
  for (auto& c : s.metric_cameras) c.intrinsics = fixtures::make_intrinsics(300.0, 320, 240);
  const ShapePrior prior = make_reference_prior();
  Eigen::VectorXd beta(prior.n_shape());
  for (Eigen::Index i = 0; i < beta.size(); ++i) beta(i) = rng.normal();
  Eigen::MatrixXd J = prior.joints(beta);
  const Vec3 shift(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.0);
  for (Eigen::Index k = 0; k < J.rows(); ++k) J.row(k) += shift.transpose();
  for (Eigen::Index k = 0; k < J.rows(); ++k) s.metric_joints.push_back(J.row(k).transpose());
  for (const auto& c : s.metric_cameras) s.depth.push_back(render_depth(c, {J}, 0.03));
  return s;
}

}  // namespace

TEST_CASE("the mean shape is already metric") {
  const ShapePrior prior = make_reference_prior();
  const ScaleResult r = estimate_scale_bone_prior(as_sequence(prior.mean), prior);
  CHECK(r.alpha == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.beta.norm() < 1e-3);
  CHECK(r.method == "bone-prior");
}

TEST_CASE("a doubled mean shape gives alpha one half") {
  const ShapePrior prior = make_reference_prior();
  const ScaleResult r = estimate_scale_bone_prior(as_sequence(prior.mean, 2.0), prior);
  CHECK(std::abs(r.alpha - 0.5) < 1e-4);
}

TEST_CASE("shape and scale come back from a prior-generated skeleton") {
  const ShapePrior prior = make_reference_prior();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prior.n_shape()));
  beta(0) = 1.5;
  beta(1) = -0.8;
  Rng rng(12);
  const ScaleResult r = estimate_scale_bone_prior(as_sequence(prior.joints(beta), 3.0, random_rigid(rng)), prior);
  CHECK(std::abs(r.alpha * 3.0 - 1.0) < 0.01);
  CHECK((r.beta - beta).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("bone-prior scale across seeds, scale-equivariant and rigid-invariant") {
  const ShapePrior prior = make_reference_prior();
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    Eigen::VectorXd beta(static_cast<Eigen::Index>(prior.n_shape()));
    for (Eigen::Index i = 0; i < beta.size(); ++i) beta(i) = rng.normal();
    const double units = std::exp(rng.uniform(-1.5, 1.5));
    const Eigen::MatrixXd J = prior.joints(beta);
    const ScaleResult r = estimate_scale_bone_prior(as_sequence(J, units, random_rigid(rng)), prior);
    CHECK(std::abs(r.alpha * units - 1.0) < 0.01);

    const ScaleResult moved = estimate_scale_bone_prior(as_sequence(J, units, random_rigid(rng)), prior);
    CHECK(std::abs(moved.alpha / r.alpha - 1.0) < 1e-6);
    const ScaleResult bigger = estimate_scale_bone_prior(as_sequence(J, 2.0 * units), prior);
    const ScaleResult plain = estimate_scale_bone_prior(as_sequence(J, units), prior);
    CHECK(std::abs(2.0 * bigger.alpha / plain.alpha - 1.0) < 1e-6);
    // beta is weakly curved (centimetre bone effects), so solver tolerance shows up at 1e-6.
    CHECK((bigger.beta - plain.beta).norm() < 1e-5);
  }
}

TEST_CASE("zero-confidence bones carry no influence") {
  const ShapePrior prior = make_reference_prior();
  auto seq = as_sequence(prior.mean, 1.7);
  const ScaleResult base = estimate_scale_bone_prior(seq, prior);
  seq.frames[0].joints[9].confidence = 0.0;
  const ScaleResult gated = estimate_scale_bone_prior(seq, prior);
  seq.frames[0].joints[9].position += Vec3(0.4, -0.2, 0.3);
  const ScaleResult moved = estimate_scale_bone_prior(seq, prior);
  CHECK(moved.alpha == gated.alpha);
  CHECK(gated.alpha == doctest::Approx(base.alpha).epsilon(1e-6));

  for (auto& j : seq.frames[0].joints) j.confidence = 0.0;
  try {
    estimate_scale_bone_prior(seq, prior);
    FAIL("expected NoReliableBones");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoReliableBones);
  }
}

TEST_CASE("bone statistics use the weighted median over frames") {
  const ShapePrior prior = make_reference_prior();
  SkeletonSequence seq;
  for (double s : {1.0, 1.1, 5.0}) seq.frames.push_back(as_sequence(prior.mean, s).frames[0]);
  const auto stats = aggregate_bones(seq, prior);
  REQUIRE(stats.size() == prior.bones.size());
  const auto [k, l] = prior.bones[0];
  CHECK(stats[0].length == doctest::Approx(1.1 * (prior.mean.row(k) - prior.mean.row(l)).norm()));
  CHECK(stats[0].confidence == doctest::Approx(1.0));
}

TEST_CASE("one depth sample gives its ratio") {
  const CameraModel cam = identity_camera();
  DepthMap d(64, 48, 3.0f);
  const std::vector<CameraModel> cams{cam};
  const std::vector<DepthCandidate> c{candidate(0, &d, {Vec3(0, 0, 1.5)}, cam)};
  CHECK(estimate_scale_depth(c, cams).alpha == doctest::Approx(2.0));
}

TEST_CASE("depth ratios average by keypoint confidence") {
  const CameraModel cam = identity_camera();
  DepthMap d(64, 48, 3.0f);
  const Vec3 a(0, 0, 1.5), b(0.3, 0, 1.0);
  const Vec2 pb = project(b, cam);
  d.at(static_cast<int>(std::lround(pb.x())), static_cast<int>(std::lround(pb.y()))) = 4.0f;
  DepthCandidate c = candidate(0, &d, {a, b}, cam);
  c.detections[1].confidence = 0.5;
  DepthScaleConfig cfg;
  cfg.zeta = 0.4;
  const std::vector<CameraModel> cams{cam};
  CHECK(estimate_scale_depth(std::vector<DepthCandidate>{c}, cams, cfg).alpha == doctest::Approx(8.0 / 3.0));
  cfg.zeta = 0.5;  // strict threshold drops the second keypoint
  CHECK(estimate_scale_depth(std::vector<DepthCandidate>{c}, cams, cfg).alpha == doctest::Approx(2.0));
}

TEST_CASE("invalid depth everywhere is an error") {
  const CameraModel cam = identity_camera();
  DepthMap d(64, 48, std::numeric_limits<float>::quiet_NaN());
  const std::vector<CameraModel> cams{cam};
  const std::vector<DepthCandidate> c{candidate(0, &d, {Vec3(0, 0, 1.5), Vec3(0.1, 0, 2)}, cam)};
  try {
    estimate_scale_depth(c, cams);
    FAIL("expected NoDepthSamples");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoDepthSamples);
  }
}

TEST_CASE("the best reprojecting frame of a view is used") {
  const CameraModel cam = identity_camera();
  DepthMap good(64, 48, 3.0f), bad(64, 48, 6.0f);
  const std::vector<Vec3> joints{Vec3(0, 0, 1.5), Vec3(0.1, 0.05, 1.5)};
  DepthCandidate a = candidate(0, &good, joints, cam);
  DepthCandidate b = candidate(0, &bad, joints, cam);
  for (auto& det : b.detections) det.position += Vec2(4.0, 0.0);
  CHECK(depth_frame_score(a, cam, 500.0) == doctest::Approx(1.0));
  CHECK(depth_frame_score(b, cam, 500.0) == doctest::Approx(std::exp(-500.0 * 4.0 / 100.0)));
  const std::vector<CameraModel> cams{cam};
  CHECK(estimate_scale_depth(std::vector<DepthCandidate>{b, a}, cams).alpha == doctest::Approx(2.0));
}

TEST_CASE("oracle depth maps recover the scale, invariant to rigid motion") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const OracleDepthScene s = oracle_depth_scene(seed);
    const double units = 1.0 / (0.5 + 0.2 * static_cast<double>(seed));  // scene units per metre
    Scene metric;
    metric.cameras = s.metric_cameras;
    const Scene scaled = apply_scale(metric, units);
    std::vector<Vec3> joints;
    for (const Vec3& X : s.metric_joints) joints.push_back(units * X);
    std::vector<DepthCandidate> cands;
    for (std::size_t c = 0; c < scaled.cameras.size(); ++c) cands.push_back(candidate(c, &s.depth[c], joints, scaled.cameras[c]));
    const ScaleResult r = estimate_scale_depth(cands, scaled.cameras);
    CHECK(std::abs(r.alpha * units - 1.0) < 0.01);

    // Move the world rigidly: X' = R X + t, camera poses compose with the inverse.
    Rng rng(seed + 50);
    const Rigid g = random_rigid(rng);
    const Pose inv = Pose::from_rt(g.R, g.t).inverse();
    std::vector<CameraModel> moved_cams = scaled.cameras;
    for (auto& c : moved_cams) c.pose = c.pose * inv;
    std::vector<DepthCandidate> moved = cands;
    for (auto& c : moved)
      for (auto& X : c.joints) X = g(X);
    CHECK(std::abs(estimate_scale_depth(moved, moved_cams).alpha / r.alpha - 1.0) < 1e-6);
  }
}

TEST_CASE("apply_scale is linear and keeps reprojection") {
  Scene scene;
  scene.cameras = fixtures::ring_cameras(3);
  scene.skeletons = as_sequence(make_reference_prior().mean);
  scene.points = {Vec3(0.1, 0.2, 0.3)};
  const Scene same = apply_scale(scene, 1.0);
  for (std::size_t c = 0; c < 3; ++c) CHECK(same.cameras[c].pose.translation == scene.cameras[c].pose.translation);
  CHECK(same.points == scene.points);

  const Scene doubled = apply_scale(scene, 2.0);
  const auto baseline = [](const Scene& s) { return (s.cameras[0].pose.center() - s.cameras[1].pose.center()).norm(); };
  CHECK(baseline(doubled) == doctest::Approx(2.0 * baseline(scene)));
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(rotation_angle_between(doubled.cameras[c].pose.rotation, scene.cameras[c].pose.rotation) == 0.0);
    const Vec3 X = scene.skeletons.frames[0].joints[0].position;
    const Vec3 X2 = doubled.skeletons.frames[0].joints[0].position;
    CHECK((project(X, scene.cameras[c]) - project(X2, doubled.cameras[c])).norm() < 1e-9);
  }
  CHECK(doubled.skeletons.frames[0].joints[3].confidence == scene.skeletons.frames[0].joints[3].confidence);
  CHECK_THROWS_AS(apply_scale(scene, 0.0), Error);
  CHECK_THROWS_AS(apply_scale(scene, -1.0), Error);
}

TEST_CASE("shape prior files round-trip and validate") {
  const ShapePrior prior = make_reference_prior(4);
  CHECK(prior.n_joints() == 17);
  CHECK(prior.n_shape() == 4);
  const auto dir = fixtures::temp_dir("prior");
  write_shape_prior(dir / "p.json", prior);
  const ShapePrior back = read_shape_prior(dir / "p.json");
  CHECK(back.mean == prior.mean);
  CHECK(back.basis == prior.basis);
  CHECK(back.bones == prior.bones);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(4);
  beta(2) = 1.0;
  CHECK((prior.joints(2.0 * beta) - prior.mean).isApprox(2.0 * (prior.joints(beta) - prior.mean), 1e-14));
  ShapePrior bad = prior;
  bad.bones.push_back({0, 40});
  CHECK_THROWS_AS(bad.validate(), Error);
}

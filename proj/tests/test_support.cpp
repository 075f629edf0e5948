#include "fixtures.hpp"

#include "polycap/config_reader.hpp"
#include "polycap/error.hpp"
#include "polycap/hashing.hpp"
#include "polycap/lbfgs.hpp"
#include "polycap/parallel.hpp"
#include "polycap/raster_io.hpp"

#include <doctest.h>

#include <atomic>
#include <fstream>

using namespace polycap;

TEST_CASE("lbfgs finds the Rosenbrock minimum") {
  auto rosen = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
    g(0) = -2.0 * a - 400.0 * x(0) * b;
    g(1) = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  Eigen::VectorXd g(2);
  const double f0 = rosen(x0, g);
  const LbfgsResult r = minimize_lbfgs(rosen, x0);
  CHECK(r.converged);
  CHECK(r.value <= f0);
  CHECK((r.x - Eigen::Vector2d(1.0, 1.0)).norm() < 1e-6);
}

TEST_CASE("lbfgs solves a convex quadratic exactly") {
  Rng rng(2);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) M(i, j) = rng.normal();
  const Eigen::MatrixXd A = M.transpose() * M + Eigen::MatrixXd::Identity(6, 6);
  const Eigen::VectorXd b = Eigen::VectorXd::Ones(6);
  auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = A * x - b;
    return 0.5 * x.dot(A * x) - b.dot(x);
  };
  const LbfgsResult r = minimize_lbfgs(f, Eigen::VectorXd::Zero(6));
  CHECK((r.x - A.ldlt().solve(b)).norm() < 1e-8);
}

TEST_CASE("sha256 of known strings") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const auto dir = fixtures::temp_dir("hash");
  std::ofstream(dir / "abc.txt", std::ios::binary) << "abc";
  CHECK(sha256_file(dir / "abc.txt") == sha256_hex("abc"));
}

TEST_CASE("depth rasters round-trip bit for bit") {
  DepthMap d(5, 3, 1.5f);
  d.at(4, 2) = std::numeric_limits<float>::quiet_NaN();
  d.at(0, 1) = 0.125f;
  const auto dir = fixtures::temp_dir("kdm");
  write_depth_map(dir / "d.kdm", d);
  CHECK(std::filesystem::file_size(dir / "d.kdm") == 12u + 15u * 4u);
  const DepthMap back = read_depth_map(dir / "d.kdm");
  REQUIRE(back.width == 5);
  REQUIRE(back.height == 3);
  CHECK(back.at(0, 1) == 0.125f);
  CHECK(std::isnan(back.at(4, 2)));
  CHECK(back.sample_nearest(Vec2(0.2, 0.9)) == 0.125);
  CHECK(std::isnan(back.sample_nearest(Vec2(-1.0, 0.0))));

  std::ofstream(dir / "bad.kdm", std::ios::binary) << "KDM2xxxxxxxx";
  CHECK_THROWS_AS(read_depth_map(dir / "bad.kdm"), Error);
}

TEST_CASE("point clouds round-trip in both PLY encodings") {
  const std::vector<Vec3> pts{{0.5, -1.25, 2.0}, {1e-3, 7.0, -0.75}};
  const auto dir = fixtures::temp_dir("ply");
  for (const PlyFormat fmt : {PlyFormat::Ascii, PlyFormat::BinaryLittleEndian}) {
    write_ply(dir / "p.ply", pts, fmt);
    const auto back = read_ply(dir / "p.ply");
    REQUIRE(back.size() == 2);
    // Coordinates are stored as float32.
    for (std::size_t i = 0; i < 2; ++i) CHECK((back[i] - pts[i]).norm() < 1e-6);
  }
  write_ply(dir / "empty.ply", std::vector<Vec3>{}, PlyFormat::Ascii);
  CHECK(read_ply(dir / "empty.ply").empty());
}

TEST_CASE("config reader rejects unknown keys and wrong types") {
  const nlohmann::json j = {{"a", 1}, {"b", "x"}};
  int a = 0;
  std::string b;
  ConfigReader ok(j, "cfg");
  ok.read("a", a);
  ok.read("b", b);
  CHECK_NOTHROW(ok.finish());
  CHECK(a == 1);

  ConfigReader partial(j, "cfg");
  partial.read("a", a);
  try {
    partial.finish();
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
    CHECK(std::string(e.what()).find("cfg.b") != std::string::npos);
  }

  ConfigReader typed(j, "cfg");
  CHECK_THROWS_AS(typed.read("b", a), Error);
  CHECK_THROWS_AS(ConfigReader(nlohmann::json::array(), "cfg"), Error);
}

TEST_CASE("rng streams depend only on the seed") {
  Rng a(77), b(77), c(78);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.bits();
    CHECK(x == b.bits());
    differs = differs || x != c.bits();
  }
  CHECK(differs);
  Rng u(3);
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    mean += v / 20000.0;
  }
  CHECK(std::abs(mean - 0.5) < 0.01);
}

TEST_CASE("parallel_for visits every index once") {
  for (const int threads : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i].fetch_add(1); });
    for (const auto& h : hits) CHECK(h.load() == 1);
  }
}

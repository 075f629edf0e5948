#include "fixtures.hpp"

#include "polycap/audiosync.hpp"
#include "polycap/error.hpp"
#include "polycap/wav.hpp"

#include <doctest.h>

#include <cmath>

using namespace polycap;

namespace {

constexpr double kFs = 48000.0;

/// Broadband noise under a slowly varying envelope.
std::vector<float> source(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> s(n);
  double level = 0.5, target = 0.5;
  long left = 0;
  for (auto& v : s) {
    if (left-- <= 0) {
      target = rng.uniform(0.05, 1.0);
      left = std::lround(rng.uniform(0.05, 0.4) * kFs);
    }
    level += std::clamp(target - level, -1e-3, 1e-3);
    v = static_cast<float>(0.25 * level * rng.normal());
  }
  return s;
}

AudioTrack slice(const std::vector<float>& src, long start, std::size_t n, double noise, std::uint64_t seed) {
  Rng rng(seed);
  AudioTrack t;
  t.sample_rate = kFs;
  t.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.samples[i] = static_cast<float>(src[start + i] + noise * rng.normal());
  return t;
}

}  // namespace

TEST_CASE("feasibility bound reproduces the 200-sample hop limit") {
  const FeasibilityReport r = subframe_feasibility(128, 48000.0, 60.0, 5.0);
  CHECK(r.h_max == 200);
  CHECK(r.feasible);
  CHECK(r.dt_hop == doctest::Approx(128.0 / 96000.0));
  CHECK_FALSE(subframe_feasibility(201, 48000.0, 60.0, 5.0).feasible);
  CHECK(subframe_feasibility(200, 48000.0, 60.0, 5.0).feasible);
}

TEST_CASE("a delayed copy yields the delay within one hop") {
  const auto src = source(static_cast<std::size_t>(12 * kFs), 1);
  const std::size_t n = static_cast<std::size_t>(10 * kFs);
  const AudioTrack a = slice(src, 24000, n, 0.0, 2);
  const AudioTrack b = slice(src, 0, n, 0.0, 3);  // b[t] = a[t - 24000]
  const MfccParams p;
  const double lag = estimate_lag(compute_mfcc(a, p), compute_mfcc(b, p), p.hop_length, kFs);
  CHECK(std::abs(lag - 0.5) <= 128.0 / kFs);
}

TEST_CASE("synchronize reports the reference at zero") {
  const auto src = source(static_cast<std::size_t>(14 * kFs), 4);
  const std::size_t n = static_cast<std::size_t>(10 * kFs);
  std::map<std::string, AudioTrack> tracks{{"a", slice(src, 96000, n, 0.01, 5)},
                                           {"b", slice(src, 48000, n, 0.01, 6)},
                                           {"c", slice(src, 150000, n, 0.01, 7)}};
  const SyncResult r = synchronize(tracks, "a", MfccParams{});
  CHECK(r.lags.at("a") == 0.0);
  CHECK(std::abs(r.lags.at("b") - 1.0) <= 128.0 / kFs);
  CHECK(std::abs(r.lags.at("c") + 54000.0 / kFs) <= 128.0 / kFs);
}

TEST_CASE("unrelated tracks are ambiguous") {
  const MfccParams p;
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const auto a = source(static_cast<std::size_t>(10 * kFs), seed);
    const auto b = source(static_cast<std::size_t>(10 * kFs), seed + 100);
    const std::size_t n = a.size();
    try {
      estimate_lag(compute_mfcc(slice(a, 0, n, 0.0, 1), p), compute_mfcc(slice(b, 0, n, 0.0, 2), p), p.hop_length, kFs);
      FAIL("expected AmbiguousPeak");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::AmbiguousPeak);
    }
  }
}

TEST_CASE("mfcc frames follow the hop") {
  AudioTrack t;
  t.sample_rate = kFs;
  t.samples = source(48000, 8);
  const MfccParams p;
  const FeatureMatrix m = compute_mfcc(t, p);
  CHECK(m.cols() == p.n_coeffs);
  CHECK(m.rows() == 1 + (48000 - p.window_size) / p.hop_length);
  CHECK(m.allFinite());
  t.samples.resize(1000);
  CHECK_THROWS_AS(compute_mfcc(t, p), Error);
}

TEST_CASE("constant tracks have no distinguishable peak") {
  AudioTrack t;
  t.sample_rate = kFs;
  t.samples.assign(static_cast<std::size_t>(4 * kFs), 0.0f);
  const MfccParams p;
  const auto m = compute_mfcc(t, p);
  CHECK_THROWS_AS(estimate_lag(m, m, p.hop_length, kFs), Error);
}

TEST_CASE("wav round-trip keeps 16-bit precision") {
  const auto dir = fixtures::temp_dir("wav");
  AudioTrack t;
  t.sample_rate = kFs;
  t.samples = source(4800, 9);
  write_wav(dir / "a.wav", t);
  const AudioTrack back = read_wav(dir / "a.wav");
  REQUIRE(back.samples.size() == t.samples.size());
  CHECK(back.sample_rate == kFs);
  for (std::size_t i = 0; i < t.samples.size(); ++i) CHECK(std::abs(back.samples[i] - t.samples[i]) < 1.0 / 32767.0);
  write_wav(dir / "f.wav", t, WavEncoding::Float32);
  CHECK(read_wav(dir / "f.wav").samples == t.samples);
}

TEST_CASE("synthetic scene audio encodes the configured lags") {
  SceneConfig cfg = fixtures::small_scene(21);
  cfg.n_frames = 500;
  cfg.lag_max = 2.0;
  cfg.depth_frames = 0;
  const SyntheticScene scene = generate_scene(cfg);
  const SyncResult r = synchronize(scene.audio, scene.cameras[0].id, MfccParams{});
  for (const auto& [id, lag] : scene.lags) CHECK(std::abs(r.lags.at(id) - lag) <= 128.0 / kFs);
}

#include "polycap/audiosync.hpp"

#include "polycap/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <vector>

namespace polycap {

namespace {

// The FFTW planner is not thread-safe; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(fftw_plan p) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};
using PlanPtr = std::unique_ptr<std::remove_pointer_t<fftw_plan>, FftwDeleter>;

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : ptr(static_cast<double*>(fftw_malloc(sizeof(double) * n))) {}
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  double* ptr;
};

struct FftwComplexBuffer {
  explicit FftwComplexBuffer(std::size_t n)
      : ptr(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))) {}
  ~FftwComplexBuffer() { fftw_free(ptr); }
  FftwComplexBuffer(const FftwComplexBuffer&) = delete;
  FftwComplexBuffer& operator=(const FftwComplexBuffer&) = delete;
  fftw_complex* ptr;
};

PlanPtr plan_r2c(int n, double* in, fftw_complex* out) {
  std::lock_guard lock(planner_mutex());
  return PlanPtr(fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE));
}

PlanPtr plan_c2r(int n, fftw_complex* in, double* out) {
  std::lock_guard lock(planner_mutex());
  return PlanPtr(fftw_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular HTK-style filters, n_mels x (window/2 + 1).
Eigen::MatrixXd mel_filterbank(int n_mels, int window, double sample_rate) {
  const int n_bins = window / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * sample_rate / window;
      if (f > lo && f < hi) fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

/// Orthonormal DCT-II basis, n_coeffs x n_mels.
Eigen::MatrixXd dct_basis(int n_coeffs, int n_mels) {
  Eigen::MatrixXd D(n_coeffs, n_mels);
  for (int k = 0; k < n_coeffs; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n_mels) : std::sqrt(2.0 / n_mels);
    for (int m = 0; m < n_mels; ++m) {
      D(k, m) = scale * std::cos(std::numbers::pi * k * (m + 0.5) / n_mels);
    }
  }
  return D;
}

int next_pow2(long n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

void MfccParams::validate() const {
  if (window_size <= 0 || hop_length <= 0 || hop_length > window_size) {
    fail(ErrorCode::InvalidConfig, "MFCC needs 0 < hop_length <= window_size");
  }
  if (n_mels <= 0 || n_coeffs <= 0 || n_coeffs > n_mels) {
    fail(ErrorCode::InvalidConfig, "MFCC needs 0 < n_coeffs <= n_mels");
  }
}

FeatureMatrix compute_mfcc(const AudioTrack& track, const MfccParams& params) {
  params.validate();
  if (!(track.sample_rate > 0)) fail(ErrorCode::InvalidAudio, "sample rate must be positive");
  const long n = static_cast<long>(track.samples.size());
  const int W = params.window_size;
  const int H = params.hop_length;
  if (n < W) fail(ErrorCode::TrackTooShort, "track shorter than one analysis window");

  const long n_frames = (n - W) / H + 1;
  const int n_bins = W / 2 + 1;
  const Eigen::MatrixXd fb = mel_filterbank(params.n_mels, W, track.sample_rate);
  const Eigen::MatrixXd dct = dct_basis(params.n_coeffs, params.n_mels);

  std::vector<double> window(W);
  for (int i = 0; i < W; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / W);

  FftwBuffer in(W);
  FftwComplexBuffer out(n_bins);
  PlanPtr plan = plan_r2c(W, in.ptr, out.ptr);

  FeatureMatrix mfcc(n_frames, params.n_coeffs);
  Eigen::VectorXd power(n_bins);
  Eigen::VectorXd log_mel(params.n_mels);
  for (long t = 0; t < n_frames; ++t) {
    const float* src = track.samples.data() + t * H;
    for (int i = 0; i < W; ++i) in.ptr[i] = window[i] * src[i];
    fftw_execute(plan.get());
    for (int k = 0; k < n_bins; ++k) power(k) = out.ptr[k][0] * out.ptr[k][0] + out.ptr[k][1] * out.ptr[k][1];
    log_mel = fb * power;
    for (int m = 0; m < params.n_mels; ++m) log_mel(m) = std::log(std::max(log_mel(m), kLogEnergyFloor));
    mfcc.row(t) = (dct * log_mel).transpose();
  }
  return mfcc;
}

LagEstimate estimate_lag_detailed(const FeatureMatrix& ref, const FeatureMatrix& other, int hop_length,
                                  double sample_rate, const LagSearchOptions& options) {
  if (ref.cols() != other.cols()) fail(ErrorCode::InvalidConfig, "feature matrices differ in width");
  if (ref.rows() < 2 || other.rows() < 2) fail(ErrorCode::TrackTooShort, "need at least two frames");
  const long na = ref.rows(), nb = other.rows();
  const long n_coeffs = ref.cols();

  const Eigen::MatrixXd a = ref.rowwise() - ref.colwise().mean();
  const Eigen::MatrixXd b = other.rowwise() - other.colwise().mean();

  // c(k) = sum_t <a_t, b_{t+k}>, k in [-(na-1), nb-1], accumulated over coefficients by FFT.
  const int n_fft = next_pow2(na + nb - 1);
  const int n_half = n_fft / 2 + 1;
  FftwBuffer buf(n_fft);
  FftwComplexBuffer fa(n_half), fbuf(n_half), acc(n_half);
  PlanPtr fwd_a = plan_r2c(n_fft, buf.ptr, fa.ptr);
  PlanPtr fwd_b = plan_r2c(n_fft, buf.ptr, fbuf.ptr);
  PlanPtr inv = plan_c2r(n_fft, acc.ptr, buf.ptr);
  for (int k = 0; k < n_half; ++k) acc.ptr[k][0] = acc.ptr[k][1] = 0.0;
  for (long c = 0; c < n_coeffs; ++c) {
    std::fill(buf.ptr, buf.ptr + n_fft, 0.0);
    for (long t = 0; t < na; ++t) buf.ptr[t] = a(t, c);
    fftw_execute(fwd_a.get());
    std::fill(buf.ptr, buf.ptr + n_fft, 0.0);
    for (long t = 0; t < nb; ++t) buf.ptr[t] = b(t, c);
    fftw_execute(fwd_b.get());
    for (int k = 0; k < n_half; ++k) {
      const std::complex<double> za(fa.ptr[k][0], fa.ptr[k][1]);
      const std::complex<double> zb(fbuf.ptr[k][0], fbuf.ptr[k][1]);
      const std::complex<double> z = std::conj(za) * zb;
      acc.ptr[k][0] += z.real();
      acc.ptr[k][1] += z.imag();
    }
  }
  fftw_execute(inv.get());
  const auto raw_corr = [&](long k) { return buf.ptr[k >= 0 ? k : n_fft + k] / n_fft; };

  // Per-overlap energies for normalization.
  std::vector<double> ea(na + 1, 0.0), eb(nb + 1, 0.0);
  for (long t = 0; t < na; ++t) ea[t + 1] = ea[t] + a.row(t).squaredNorm();
  for (long t = 0; t < nb; ++t) eb[t + 1] = eb[t] + b.row(t).squaredNorm();

  const long min_overlap = std::max<long>(2, static_cast<long>(std::ceil(options.min_overlap_fraction *
                                                                         std::min(na, nb))));
  std::vector<long> offsets;
  std::vector<double> ncc;
  for (long k = -(na - 1); k <= nb - 1; ++k) {
    const long t0 = std::max<long>(0, -k);
    const long t1 = std::min<long>(na, nb - k);
    const long overlap = t1 - t0;
    if (overlap < min_overlap) continue;
    const double den = std::sqrt((ea[t1] - ea[t0]) * (eb[t1 + k] - eb[t0 + k]));
    offsets.push_back(k);
    ncc.push_back(den > 0 ? std::clamp(raw_corr(k) / den, -1.0, 1.0) : 0.0);
  }
  if (ncc.size() < 3) fail(ErrorCode::AmbiguousPeak, "too few admissible offsets");

  const std::size_t best = static_cast<std::size_t>(std::max_element(ncc.begin(), ncc.end()) - ncc.begin());
  // Main lobe: monotone descent on both sides of the peak.
  std::size_t lo = best, hi = best;
  while (lo > 0 && ncc[lo - 1] <= ncc[lo]) --lo;
  while (hi + 1 < ncc.size() && ncc[hi + 1] <= ncc[hi]) ++hi;
  double second = -1.0;
  for (std::size_t i = 0; i < ncc.size(); ++i) {
    if (i >= lo && i <= hi) continue;
    const bool local_max = (i == 0 || ncc[i] >= ncc[i - 1]) && (i + 1 == ncc.size() || ncc[i] >= ncc[i + 1]);
    if (local_max) second = std::max(second, ncc[i]);
  }

  LagEstimate est;
  est.offset_frames = offsets[best];
  est.lag_seconds = offsets[best] * static_cast<double>(hop_length) / sample_rate;
  est.peak = ncc[best];
  est.second_peak = second;
  // Share of the headroom above the runner-up that the peak claims; unrelated tracks leave both peaks on the
  // same null distribution, so the peak covers only a small part of the gap to 1.
  est.prominence = second < 1.0 ? (est.peak - second) / (1.0 - second) : 0.0;

  const bool flat_top = est.peak <= 0.0 || (est.peak - second) < options.min_peak_separation * std::abs(est.peak);
  if (flat_top || est.prominence < options.min_prominence) {
    std::ostringstream os;
    os << "no distinct correlation peak (peak " << est.peak << ", runner-up " << second << ", prominence "
       << est.prominence << ")";
    fail(ErrorCode::AmbiguousPeak, os.str());
  }
  return est;
}

double estimate_lag(const FeatureMatrix& ref, const FeatureMatrix& other, int hop_length, double sample_rate) {
  return estimate_lag_detailed(ref, other, hop_length, sample_rate).lag_seconds;
}

SyncResult synchronize(const std::map<std::string, AudioTrack>& tracks, const std::string& reference,
                       const MfccParams& params, const LagSearchOptions& options) {
  const auto ref_it = tracks.find(reference);
  if (ref_it == tracks.end()) fail(ErrorCode::MissingLag, "no audio track for reference camera " + reference);
  const double fs = ref_it->second.sample_rate;
  const FeatureMatrix ref_features = compute_mfcc(ref_it->second, params);

  SyncResult result;
  result.reference = reference;
  for (const auto& [id, track] : tracks) {
    if (id == reference) {
      result.lags[id] = 0.0;
      result.correlation_peak[id] = 1.0;
      continue;
    }
    if (track.sample_rate != fs) fail(ErrorCode::InvalidAudio, "sample rate of " + id + " differs from reference");
    const LagEstimate est = estimate_lag_detailed(ref_features, compute_mfcc(track, params), params.hop_length,
                                                  fs, options);
    result.lags[id] = est.lag_seconds;
    result.correlation_peak[id] = est.peak;
  }
  return result;
}

FeasibilityReport subframe_feasibility(double hop_length, double sample_rate, double frame_rate,
                                       double max_mic_distance_delta) {
  if (!(hop_length > 0 && sample_rate > 0 && frame_rate > 0 && max_mic_distance_delta >= 0)) {
    fail(ErrorCode::InvalidConfig, "feasibility inputs must be positive");
  }
  FeasibilityReport r;
  r.dt_hop = hop_length / (2.0 * sample_rate);
  r.dt_distance = max_mic_distance_delta / kSpeedOfSound;
  r.feasible = r.dt_hop + r.dt_distance < 1.0 / frame_rate;
  r.h_max_bound = 2.0 * sample_rate / frame_rate - 2.0 * sample_rate * max_mic_distance_delta / kSpeedOfSound;
  r.h_max = static_cast<long>(std::ceil(r.h_max_bound)) - 1;
  r.d_max = kSpeedOfSound * (1.0 / frame_rate - hop_length / (2.0 * sample_rate));
  return r;
}

}  // namespace polycap

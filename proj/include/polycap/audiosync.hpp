#pragma once

#include "polycap/wav.hpp"

#include <Eigen/Core>

#include <map>
#include <string>

namespace polycap {

inline constexpr double kSpeedOfSound = 343.0;  // m/s

struct MfccParams {
  int window_size = 2048;
  int hop_length = 128;
  int n_mels = 64;
  int n_coeffs = 20;

  void validate() const;
};

/// Rows are frames, columns are cepstral coefficients.
using FeatureMatrix = Eigen::MatrixXd;

/// Log-energy floor applied before the DCT.
inline constexpr double kLogEnergyFloor = 1e-10;

/// Hann-windowed STFT -> mel filterbank -> log -> orthonormal DCT-II.
/// Frame t covers samples [t * hop, t * hop + window). Throws TrackTooShort.
FeatureMatrix compute_mfcc(const AudioTrack& track, const MfccParams& params);

struct LagSearchOptions {
  /// Offsets whose overlap is shorter than this fraction of the shorter track are skipped.
  double min_overlap_fraction = 0.5;
  /// Top-two peak separation below this fraction of the peak is ambiguous.
  double min_peak_separation = 0.01;
  /// (peak - runner-up) / (1 - runner-up) below this is ambiguous.
  double min_prominence = 0.6;
};

struct LagEstimate {
  double lag_seconds = 0.0;
  long offset_frames = 0;
  double peak = 0.0;         // normalized correlation in [-1, 1]
  double second_peak = 0.0;  // best competing local maximum
  double prominence = 0.0;
};

/// Normalized cross-correlation of mean-centered MFCC sequences. A positive lag
/// means the content of `other` is delayed relative to `ref` (other[t] ~ ref[t - lag]).
/// Throws AmbiguousPeak.
LagEstimate estimate_lag_detailed(const FeatureMatrix& ref, const FeatureMatrix& other, int hop_length,
                                  double sample_rate, const LagSearchOptions& options = {});
double estimate_lag(const FeatureMatrix& ref, const FeatureMatrix& other, int hop_length,
                    double sample_rate);

struct SyncResult {
  std::string reference;
  std::map<std::string, double> lags;              // seconds, reference is exactly 0
  std::map<std::string, double> correlation_peak;  // reference is 1
};

/// Estimates every camera's lag against `reference`. Tracks must share a sample rate.
SyncResult synchronize(const std::map<std::string, AudioTrack>& tracks, const std::string& reference,
                       const MfccParams& params, const LagSearchOptions& options = {});

struct FeasibilityReport {
  bool feasible = false;
  double dt_hop = 0.0;       // H / (2 f_s)
  double dt_distance = 0.0;  // |d1 - d2| / c
  double h_max_bound = 0.0;  // H must be strictly below this
  long h_max = 0;            // largest integer hop satisfying the strict bound
  double d_max = 0.0;        // meters
};

/// Subframe accuracy holds when H/(2 f_s) + delta_d / c < 1 / f_r.
FeasibilityReport subframe_feasibility(double hop_length, double sample_rate, double frame_rate,
                                       double max_mic_distance_delta);

}  // namespace polycap

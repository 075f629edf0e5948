#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace polycap {

enum class ErrorCode {
  // camgeom
  NonPositiveDepth,
  NoConvergence,
  InsufficientViews,
  DegenerateGeometry,
  InvalidCamera,
  // audiosync
  TrackTooShort,
  AmbiguousPeak,
  InvalidAudio,
  // keystore
  MissingLag,
  InconsistentFrameRate,
  NoSharedFrames,
  EmptyPool,
  InvalidDetections,
  // pairwise
  ZeroDenominator,
  NotEnoughCorrespondences,
  DegenerateConfiguration,
  LowInlierRatio,
  // scalegraph
  DisconnectedGraph,
  MissingScale,
  // bundle
  NoTriangulablePoints,
  DivergedPass,
  RankDeficient,
  // lift3d
  DimensionMismatch,
  // metricscale
  NoReliableBones,
  NoDepthSamples,
  NonPositiveScale,
  // evalmetrics
  IdMismatch,
  EmptyOverlap,
  // synth / pipeline
  InvalidConfig,
  MissingPrerequisite,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code. Every module reports failures
/// through this type so callers can branch on `code()` instead of parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace polycap

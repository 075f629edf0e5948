#include "polycap/error.hpp"

namespace polycap {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::InsufficientViews: return "InsufficientViews";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::InvalidCamera: return "InvalidCamera";
    case ErrorCode::TrackTooShort: return "TrackTooShort";
    case ErrorCode::AmbiguousPeak: return "AmbiguousPeak";
    case ErrorCode::InvalidAudio: return "InvalidAudio";
    case ErrorCode::MissingLag: return "MissingLag";
    case ErrorCode::InconsistentFrameRate: return "InconsistentFrameRate";
    case ErrorCode::NoSharedFrames: return "NoSharedFrames";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::InvalidDetections: return "InvalidDetections";
    case ErrorCode::ZeroDenominator: return "ZeroDenominator";
    case ErrorCode::NotEnoughCorrespondences: return "NotEnoughCorrespondences";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::LowInlierRatio: return "LowInlierRatio";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::MissingScale: return "MissingScale";
    case ErrorCode::NoTriangulablePoints: return "NoTriangulablePoints";
    case ErrorCode::DivergedPass: return "DivergedPass";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NoReliableBones: return "NoReliableBones";
    case ErrorCode::NoDepthSamples: return "NoDepthSamples";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::EmptyOverlap: return "EmptyOverlap";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingPrerequisite: return "MissingPrerequisite";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace polycap

#include "semba/errors.hpp"

namespace semba {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonPositiveDisparity: return "NonPositiveDisparity";
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kInsufficientSamples: return "InsufficientSamples";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kDegenerateVector: return "DegenerateVector";
    case ErrorCode::kZeroMeanVector: return "ZeroMeanVector";
    case ErrorCode::kEmptyStack: return "EmptyStack";
    case ErrorCode::kProviderFailure: return "ProviderFailure";
    case ErrorCode::kMissingData: return "MissingData";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kDivergedEnergy: return "DivergedEnergy";
    case ErrorCode::kTooFewPairs: return "TooFewPairs";
    case ErrorCode::kMalformedLine: return "MalformedLine";
    case ErrorCode::kEmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::kBadFormat: return "BadFormat";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

}  // namespace semba

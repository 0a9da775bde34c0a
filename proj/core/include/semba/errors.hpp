#pragma once

#include <stdexcept>
#include <string>

namespace semba {

enum class ErrorCode {
  kNonPositiveDisparity,
  kBehindCamera,
  kInsufficientSamples,
  kDimensionMismatch,
  kOutOfBounds,
  kDegenerateVector,
  kZeroMeanVector,
  kEmptyStack,
  kProviderFailure,
  kMissingData,
  kSingularSystem,
  kDivergedEnergy,
  kTooFewPairs,
  kMalformedLine,
  kEmptyTrajectory,
  kBadFormat,
  kConfig,
  kIo,
};

const char* to_string(ErrorCode code);

/// Exception type thrown by every semba module. The code identifies the
/// failure class; the message carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace semba

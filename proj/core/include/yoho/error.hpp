#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace yoho {

enum class ErrorCode {
  MalformedAnnotation,
  MissingImage,
  InvariantViolation,
  DegeneratePolygon,
  SeedTooSmall,
  SourceTooSmall,
  NoPlacementPossible,
  IoFailure,
  ShapeError,
  CheckpointMismatch,
  AllIgnored,
  EmptyGroundTruth,
  NonFiniteLoss,
  MissingPair,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so the
/// CLI and the HTTP service can map it onto an exit status or response code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace yoho

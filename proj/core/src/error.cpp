#include "yoho/error.hpp"

namespace yoho {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedAnnotation: return "MalformedAnnotation";
    case ErrorCode::MissingImage: return "MissingImage";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::DegeneratePolygon: return "DegeneratePolygon";
    case ErrorCode::SeedTooSmall: return "SeedTooSmall";
    case ErrorCode::SourceTooSmall: return "SourceTooSmall";
    case ErrorCode::NoPlacementPossible: return "NoPlacementPossible";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::AllIgnored: return "AllIgnored";
    case ErrorCode::EmptyGroundTruth: return "EmptyGroundTruth";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace yoho

#include "dasgil/error.hpp"

namespace dasgil {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::VirtualMissingGroundTruth: return "VirtualMissingGroundTruth";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NoValidPositive: return "NoValidPositive";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TargetTooLarge: return "TargetTooLarge";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NoValidPixels: return "NoValidPixels";
    case ErrorCode::ClassOutOfRange: return "ClassOutOfRange";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::LayerOutOfRange: return "LayerOutOfRange";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyDomain: return "EmptyDomain";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::LayerMismatch: return "LayerMismatch";
    case ErrorCode::EmptyDatabase: return "EmptyDatabase";
    case ErrorCode::TooFewChannels: return "TooFewChannels";
    case ErrorCode::NonUnitQuaternion: return "NonUnitQuaternion";
    case ErrorCode::EmptyQuerySet: return "EmptyQuerySet";
    case ErrorCode::InvalidReport: return "InvalidReport";
  }
  return "Unknown";
}

}  // namespace dasgil

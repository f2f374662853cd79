#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dasgil {

enum class ErrorCode {
  MissingFile,
  MalformedRecord,
  DuplicateId,
  VirtualMissingGroundTruth,
  IoError,
  InvalidConfig,
  NoValidPositive,
  DimensionMismatch,
  TargetTooLarge,
  ShapeMismatch,
  NoValidPixels,
  ClassOutOfRange,
  EmptyBatch,
  LayerOutOfRange,
  NonFiniteInput,
  NonFiniteLoss,
  EmptyDomain,
  VersionMismatch,
  LayerMismatch,
  EmptyDatabase,
  TooFewChannels,
  NonUnitQuaternion,
  EmptyQuerySet,
  InvalidReport,
};

std::string_view to_string(ErrorCode code);

// Single exception type for all domain failures; `code()` identifies the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

inline void require(bool cond, ErrorCode code, const std::string& detail) {
  if (!cond) fail(code, detail);
}

}  // namespace dasgil

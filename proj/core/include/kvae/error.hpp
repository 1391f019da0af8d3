#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kvae {

enum class ErrorCode {
  kNotPsd,
  kNotPd,
  kNonHermitianInput,
  kDimensionMismatch,
  kRelationNotSupported,
  kUnknownIdentity,
  kInvalidRelation,
  kNonFiniteEvaluation,
  kEmptyAtlas,
  kIndexOutOfRange,
  kEmptyDirections,
  kDegenerateFit,
  kMissingAtlas,
  kNonFiniteLoss,
  kInsufficientCandidates,
  kInsufficientSupport,
  kClampRateExceeded,
  kBadMagic,
  kTruncatedFile,
  kBadRecordLength,
  kCountTooLarge,
  kDisconnectedGraph,
  kGradientCheckFailed,
  kInvalidArgument,
  kIo,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Input errors map to exit code 2 in the CLI; everything else is an assertion failure.
bool is_input_error(ErrorCode code);

}  // namespace kvae

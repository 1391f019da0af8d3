#include "kvae/error.hpp"

namespace kvae {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotPsd: return "NotPSD";
    case ErrorCode::kNotPd: return "NotPD";
    case ErrorCode::kNonHermitianInput: return "NonHermitianInput";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kRelationNotSupported: return "RelationNotSupported";
    case ErrorCode::kUnknownIdentity: return "UnknownIdentity";
    case ErrorCode::kInvalidRelation: return "InvalidRelation";
    case ErrorCode::kNonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::kEmptyAtlas: return "EmptyAtlas";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kEmptyDirections: return "EmptyDirections";
    case ErrorCode::kDegenerateFit: return "DegenerateFit";
    case ErrorCode::kMissingAtlas: return "MissingAtlas";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kInsufficientCandidates: return "InsufficientCandidates";
    case ErrorCode::kInsufficientSupport: return "InsufficientSupport";
    case ErrorCode::kClampRateExceeded: return "ClampRateExceeded";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kBadRecordLength: return "BadRecordLength";
    case ErrorCode::kCountTooLarge: return "CountTooLarge";
    case ErrorCode::kDisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::kGradientCheckFailed: return "GradientCheckFailed";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBadMagic:
    case ErrorCode::kTruncatedFile:
    case ErrorCode::kBadRecordLength:
    case ErrorCode::kCountTooLarge:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kIo:
    case ErrorCode::kMissingAtlas:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kUnknownIdentity:
      return true;
    default:
      return false;
  }
}

}  // namespace kvae

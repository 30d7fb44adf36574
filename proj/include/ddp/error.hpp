// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ddp {

enum class ErrorCode {
  NonFiniteLoss,
  NonFiniteGrad,
  NonFiniteState,
  UnknownField,
  EmptyMultihot,
  InvalidValue,
  IndexOutOfRange,
  NoActiveLookup,
  DimMismatch,
  StaleCache,
  EmptyBatch,
  LengthMismatch,
  NegativeLambda,
  UntaggedSlot,
  MissingColumn,
  UnreadableFile,
  EmptyStream,
  PeriodOutOfRange,
  InvalidDistribution,
  EmptyWarmup,
  NoTeacher,
  InsufficientPeriods,
  VersionMismatch,
  SchemaDigestMismatch,
  CorruptFile,
  DegenerateLabels,
  EmptySet,
  NoItemField,
  SparseCell,
  ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteLoss: return "NON_FINITE_LOSS";
    case ErrorCode::NonFiniteGrad: return "NON_FINITE_GRAD";
    case ErrorCode::NonFiniteState: return "NON_FINITE_STATE";
    case ErrorCode::UnknownField: return "UNKNOWN_FIELD";
    case ErrorCode::EmptyMultihot: return "EMPTY_MULTIHOT";
    case ErrorCode::InvalidValue: return "INVALID_VALUE";
    case ErrorCode::IndexOutOfRange: return "INDEX_OUT_OF_RANGE";
    case ErrorCode::NoActiveLookup: return "NO_ACTIVE_LOOKUP";
    case ErrorCode::DimMismatch: return "DIM_MISMATCH";
    case ErrorCode::StaleCache: return "STALE_CACHE";
    case ErrorCode::EmptyBatch: return "EMPTY_BATCH";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::NegativeLambda: return "NEGATIVE_LAMBDA";
    case ErrorCode::UntaggedSlot: return "UNTAGGED_SLOT";
    case ErrorCode::MissingColumn: return "MISSING_COLUMN";
    case ErrorCode::UnreadableFile: return "UNREADABLE_FILE";
    case ErrorCode::EmptyStream: return "EMPTY_STREAM";
    case ErrorCode::PeriodOutOfRange: return "PERIOD_OUT_OF_RANGE";
    case ErrorCode::InvalidDistribution: return "INVALID_DISTRIBUTION";
    case ErrorCode::EmptyWarmup: return "EMPTY_WARMUP";
    case ErrorCode::NoTeacher: return "NO_TEACHER";
    case ErrorCode::InsufficientPeriods: return "INSUFFICIENT_PERIODS";
    case ErrorCode::VersionMismatch: return "VERSION_MISMATCH";
    case ErrorCode::SchemaDigestMismatch: return "SCHEMA_DIGEST_MISMATCH";
    case ErrorCode::CorruptFile: return "CORRUPT_FILE";
    case ErrorCode::DegenerateLabels: return "DEGENERATE_LABELS";
    case ErrorCode::EmptySet: return "EMPTY_SET";
    case ErrorCode::NoItemField: return "NO_ITEM_FIELD";
    case ErrorCode::SparseCell: return "SPARSE_CELL";
    case ErrorCode::ConfigError: return "CONFIG_ERROR";
  }
  return "UNKNOWN";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

}  // namespace ddp

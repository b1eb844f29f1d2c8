#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ebcal {

enum class ErrorCode {
  InvalidArgument,
  IndexOutOfRange,
  DegenerateBasisTerm,
  LengthMismatch,
  ConstantTermNotOne,
  RankDeficient,
  NonConverged,
  SeparationDetected,
  HypothesisViolated,
  SingularGram,
  MissingColumn,
  NonBinaryTreatment,
  NonFiniteValue,
  MissingTerm,
  UnknownTerm,
  EmptyArm,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::IndexOutOfRange: return "INDEX_OUT_OF_RANGE";
    case ErrorCode::DegenerateBasisTerm: return "DEGENERATE_BASIS_TERM";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::ConstantTermNotOne: return "CONSTANT_TERM_NOT_ONE";
    case ErrorCode::RankDeficient: return "RANK_DEFICIENT";
    case ErrorCode::NonConverged: return "NON_CONVERGED";
    case ErrorCode::SeparationDetected: return "SEPARATION_DETECTED";
    case ErrorCode::HypothesisViolated: return "HYPOTHESIS_VIOLATED";
    case ErrorCode::SingularGram: return "SINGULAR_GRAM";
    case ErrorCode::MissingColumn: return "MISSING_COLUMN";
    case ErrorCode::NonBinaryTreatment: return "NON_BINARY_TREATMENT";
    case ErrorCode::NonFiniteValue: return "NON_FINITE_VALUE";
    case ErrorCode::MissingTerm: return "MISSING_TERM";
    case ErrorCode::UnknownTerm: return "UNKNOWN_TERM";
    case ErrorCode::EmptyArm: return "EMPTY_ARM";
    case ErrorCode::Io: return "IO_ERROR";
  }
  return "UNKNOWN";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ebcal

#ifndef HMME_ERROR_HPP
#define HMME_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace hmme {

enum class ErrorCode {
  DimensionMismatch,
  EmptyDesign,
  Degenerate,
  InvalidArgument,
  MissingColumn,
  NonNumericResponse,
  FactorWithOneLevel,
  SingularSystem,
  NonEstimableContrast,
  InconsistentInverse,
  RouteDisagreement,
  ZeroVarianceOfVariance,
  DfUndefined,
  SingularMatrix,
  NotPositiveSemidefinite,
  Parse,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::EmptyDesign: return "empty-design";
    case ErrorCode::Degenerate: return "degenerate";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::MissingColumn: return "missing-column";
    case ErrorCode::NonNumericResponse: return "non-numeric-response";
    case ErrorCode::FactorWithOneLevel: return "factor-with-one-level";
    case ErrorCode::SingularSystem: return "singular-system";
    case ErrorCode::NonEstimableContrast: return "non-estimable-contrast";
    case ErrorCode::InconsistentInverse: return "inconsistent-inverse";
    case ErrorCode::RouteDisagreement: return "route-disagreement";
    case ErrorCode::ZeroVarianceOfVariance: return "zero-variance-of-variance";
    case ErrorCode::DfUndefined: return "df-undefined";
    case ErrorCode::SingularMatrix: return "singular-matrix";
    case ErrorCode::NotPositiveSemidefinite: return "not-positive-semidefinite";
    case ErrorCode::Parse: return "parse-error";
    case ErrorCode::Io: return "io-error";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hmme

#endif  // HMME_ERROR_HPP

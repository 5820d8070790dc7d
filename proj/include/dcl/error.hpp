// Error type shared by every dcl module.
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dcl {

enum class Errc {
  ZeroVector,
  DimensionTooSmall,
  InvalidArgument,
  InvalidTable,
  LabelMismatch,
  PriorMismatch,
  DegenerateClass,
  EmptyNegatives,
  BudgetExceeded,
  NegativeDenominator,
  OracleRangeExceeded,
  BatchTooSmall,
  DivergenceDetected,
  SingleClassData,
  BoundPreconditionViolated,
  InsufficientGrid,
  ConfigError,
  IoError,
};

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DimensionTooSmall: return "DimensionTooSmall";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::InvalidTable: return "InvalidTable";
    case Errc::LabelMismatch: return "LabelMismatch";
    case Errc::PriorMismatch: return "PriorMismatch";
    case Errc::DegenerateClass: return "DegenerateClass";
    case Errc::EmptyNegatives: return "EmptyNegatives";
    case Errc::BudgetExceeded: return "BudgetExceeded";
    case Errc::NegativeDenominator: return "NegativeDenominator";
    case Errc::OracleRangeExceeded: return "OracleRangeExceeded";
    case Errc::BatchTooSmall: return "BatchTooSmall";
    case Errc::DivergenceDetected: return "DivergenceDetected";
    case Errc::SingleClassData: return "SingleClassData";
    case Errc::BoundPreconditionViolated: return "BoundPreconditionViolated";
    case Errc::InsufficientGrid: return "InsufficientGrid";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace dcl

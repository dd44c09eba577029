#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spherelab {

enum class ErrorCode {
  ZeroNorm,
  InvalidTriplet,
  NoValidPairs,
  BadLabel,
  UnsupportedLoss,
  BadSchedule,
  ShapeMismatch,
  BadParams,
  Infeasible,
  BadK,
  DegenerateClustering,
  NonFinite,
  DivergenceDetected,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::InvalidTriplet: return "InvalidTriplet";
    case ErrorCode::NoValidPairs: return "NoValidPairs";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::UnsupportedLoss: return "UnsupportedLoss";
    case ErrorCode::BadSchedule: return "BadSchedule";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::BadK: return "BadK";
    case ErrorCode::DegenerateClustering: return "DegenerateClustering";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace spherelab

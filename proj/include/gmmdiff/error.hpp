#pragma once

#include <cstddef>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace gmmdiff {

enum class ErrorCode {
  InvalidMatrix,
  SingularMatrix,
  NotPositiveDefinite,
  InvalidModel,
  EmptyClass,
  RankDeficient,
  InvalidTime,
  ScheduleSingular,
  SingularSystem,
  Diverged,
  InvalidPlan,
  NumericalBlowup,
  InsufficientSamples,
  DegenerateRegime,
  ConfigError,
  IoError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidMatrix: return "InvalidMatrix";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::InvalidTime: return "InvalidTime";
    case ErrorCode::ScheduleSingular: return "ScheduleSingular";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
    case ErrorCode::NumericalBlowup: return "NumericalBlowup";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::DegenerateRegime: return "DegenerateRegime";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Base exception for every failure raised by the library. The code names the
/// failure class; the message carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Raised when a covariance is (numerically) singular; n_k is too small for d.
class RankDeficientError : public Error {
 public:
  RankDeficientError(double lambda_min, double tol)
      : Error(ErrorCode::RankDeficient,
              "smallest eigenvalue " + format_g(lambda_min) + " below tolerance " + format_g(tol)),
        lambda_min_(lambda_min) {}

  double lambda_min() const noexcept { return lambda_min_; }

 private:
  double lambda_min_;
};

class NumericalBlowupError : public Error {
 public:
  explicit NumericalBlowupError(std::size_t step)
      : Error(ErrorCode::NumericalBlowup, "non-finite state at step " + std::to_string(step)),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace gmmdiff

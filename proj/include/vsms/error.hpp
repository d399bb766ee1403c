#pragma once

#include <stdexcept>
#include <string>

namespace vsms {

enum class ErrorKind {
  invalid_dimension,
  invalid_coefficient,
  out_of_domain,
  solver,
  nesting,
  spectral,
  ill_conditioned_covariance,
  indicator,
  degenerate_denominator,
  template_mismatch,
  stale_library,
  format,
  checkpoint,
  insufficient_samples,
  unreliable_estimate,
  config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_dimension: return "invalid-dimension";
    case ErrorKind::invalid_coefficient: return "invalid-coefficient";
    case ErrorKind::out_of_domain: return "out-of-domain";
    case ErrorKind::solver: return "solver";
    case ErrorKind::nesting: return "nesting";
    case ErrorKind::spectral: return "spectral";
    case ErrorKind::ill_conditioned_covariance: return "ill-conditioned-covariance";
    case ErrorKind::indicator: return "indicator";
    case ErrorKind::degenerate_denominator: return "degenerate-denominator";
    case ErrorKind::template_mismatch: return "template";
    case ErrorKind::stale_library: return "stale-library";
    case ErrorKind::format: return "format";
    case ErrorKind::checkpoint: return "checkpoint";
    case ErrorKind::insufficient_samples: return "insufficient-samples";
    case ErrorKind::unreliable_estimate: return "unreliable-estimate";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Linear solve failure inside a time loop; `step` is the 1-based step index
/// (0 when the failure happened before stepping).
class SolverError : public Error {
 public:
  SolverError(const std::string& what, int step)
      : Error(ErrorKind::solver, what + " (step " + std::to_string(step) + ")"), step_(step) {}

  int step() const noexcept { return step_; }

 private:
  int step_;
};

}  // namespace vsms

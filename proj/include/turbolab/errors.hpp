#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace turbolab {

/// Bad input or configuration. Maps to CLI exit code 2.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Grid cannot resolve the requested scale (mollifier, delta, bandwidth, window).
class ResolutionError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Explicit step refused because dt violates the stability bound.
class CflError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Integrand not integrable (e.g. kappa^2 with sigma = 0).
class SingularityError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Runtime numerical failure. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class BlowUpError : public NumericalError {
public:
  BlowUpError(const std::string& what, std::int64_t time_index)
      : NumericalError(what + " (time index " + std::to_string(time_index) + ")"),
        time_index_(time_index) {}
  std::int64_t time_index() const noexcept { return time_index_; }

private:
  std::int64_t time_index_;
};

/// Fixed-point iteration failed to converge; carries the last residual.
class DivergenceError : public NumericalError {
public:
  DivergenceError(const std::string& what, double residual)
      : NumericalError(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

private:
  double residual_;
};

}  // namespace turbolab

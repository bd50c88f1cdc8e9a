#pragma once

#include <stdexcept>
#include <string>

namespace mfg {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent user-supplied configuration or parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Two objects that must share a time grid do not.
class GridMismatchError : public Error {
 public:
  using Error::Error;
};

// An ODE integration left the trusted region (non-finite values or
// norm beyond the blow-up guard).
class IntegrationError : public Error {
 public:
  using Error::Error;
};

// An iterative solver stopped without reaching its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& msg, double residual, int iterations)
      : Error(msg), residual(residual), iterations(iterations) {}

  double residual = 0.0;
  int iterations = 0;
};

// Requested data is not present (e.g. per-agent paths were not retained).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace mfg

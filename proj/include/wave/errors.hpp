#pragma once

#include <stdexcept>
#include <string>

namespace wave {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Parameters, configuration or input data violate a documented invariant.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// Structured-text or CSV input could not be parsed. `line` is 1-based, 0 if unknown.
class ParseError : public ValidationError {
public:
  ParseError(const std::string& what, int line = 0)
      : ValidationError(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  int line() const noexcept { return line_; }

private:
  int line_;
};

/// Identification data does not cover both the rigid and the compliant regime.
class InsufficientSamplesError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Numerical failure: blow-up, divergence, non-convergence.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// The spring pack would have to compress past its solid length.
class SaturationError : public NumericalError {
public:
  SaturationError(double displacement, double available, double time = -1.0)
      : NumericalError(message(displacement, available, time)),
        displacement_(displacement),
        available_(available),
        time_(time) {}

  double displacement() const noexcept { return displacement_; }
  double available() const noexcept { return available_; }
  /// Simulation time of the event, negative when raised outside a simulation.
  double time() const noexcept { return time_; }

private:
  static std::string message(double x, double avail, double t) {
    std::string s = "spring saturation: worm displacement " + std::to_string(x * 1e3) +
                    " mm exceeds available travel " + std::to_string(avail * 1e3) + " mm";
    if (t >= 0.0) s += " at t=" + std::to_string(t) + " s";
    return s;
  }

  double displacement_;
  double available_;
  double time_;
};

/// Every multi-start candidate of a fit produced non-finite residuals.
class DivergedError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

}  // namespace wave

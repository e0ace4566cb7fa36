#pragma once

#include <stdexcept>
#include <string>

namespace meanflow {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite samples or otherwise invalid data.
class DataError : public Error {
public:
  using Error::Error;
};

/// Argument outside its documented domain.
class ParameterError : public Error {
public:
  using Error::Error;
};

/// e^v would overflow (v_max above the overflow ceiling). Raised instead of
/// producing Inf so that blow-up runs terminate cleanly.
class BlowUpOverflow : public Error {
public:
  BlowUpOverflow(double v_max, const std::string& where)
      : Error("e^v overflow in " + where + " (v_max = " + std::to_string(v_max) + ")"),
        v_max_(v_max) {}
  [[nodiscard]] double v_max() const noexcept { return v_max_; }

private:
  double v_max_;
};

/// Time step driven below dt_min by the step controller.
class StiffnessFailure : public Error {
public:
  using Error::Error;
};

/// An iterative linear or nonlinear solver did not converge.
class SolverFailure : public Error {
public:
  using Error::Error;
};

/// Monitored volume drifted past the configured bound.
class IntegratorAccuracyError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace meanflow

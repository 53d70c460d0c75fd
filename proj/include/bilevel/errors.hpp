#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bilevel {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on arguments was violated (dimension mismatch, bad range).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// A requested optional oracle member is not available.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// A structural property promised by the caller does not hold.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Problem constants violate a feasibility constraint of an instance.
class ConstraintError : public Error {
 public:
  using Error::Error;
};

/// Input is larger than a configured dense-computation cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Floating-point failure of a numerical routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
};

class BracketError : public NumericError {
 public:
  using NumericError::NumericError;
};

class SingularityError : public NumericError {
 public:
  SingularityError(const std::string& what, double condition)
      : NumericError(what), condition_(condition) {}
  /// Estimated condition number of the rejected matrix.
  double condition() const { return condition_; }

 private:
  double condition_;
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : NumericError(what), step_(step) {}
  /// Iteration index at which the first non-finite value appeared.
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// The dimension needed by a construction exceeds the configured cap.
class InfeasibleDimensionError : public Error {
 public:
  InfeasibleDimensionError(const std::string& what, long long required)
      : Error(what), required_(required) {}
  long long required_dimension() const { return required_; }

 private:
  long long required_;
};

}  // namespace bilevel

#pragma once

#include <stdexcept>
#include <string>

namespace ssmf {

// Failure classes. The CLI maps each to a distinct exit code.

/// A caller broke a documented precondition (shape, index, range).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite intermediate, divergence, or a matrix that should have been
/// positive definite but was not.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A layer whose continuous-time eigenvalues are not all strictly negative.
class StabilityError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Random generation gave up (rejection loop exhausted).
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested sample budget below the configured minimum.
class StatisticalPowerError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace ssmf

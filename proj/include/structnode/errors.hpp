#pragma once

#include <stdexcept>
#include <string>

namespace structnode {

// Error taxonomy shared by every module. The CLI maps each category to its
// own exit code, so callers should throw the most specific type available.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions, invalid gains, unknown presets.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() from a non-scalar root.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Query outside the domain of a sampled signal.
class OutOfDomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values produced while integrating a vector field.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double time)
      : Error(what + " (t=" + std::to_string(time) + ")"), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Non-finite loss or gradient during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Singular linear systems, filter divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A data-dependent precondition does not hold (e.g. window longer than data).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Config or file content that does not match the declared schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace structnode

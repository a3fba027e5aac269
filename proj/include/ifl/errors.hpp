#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace ifl {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated precondition. The CLI maps it to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or singular evaluations, optionally attributed to an agent.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::optional<std::size_t> agent = std::nullopt)
      : Error(agent ? what + " (agent " + std::to_string(*agent) + ")" : what), agent_(agent) {}

  std::optional<std::size_t> agent() const { return agent_; }

 private:
  std::optional<std::size_t> agent_;
};

/// sigma0 + sum(s) <= 0 in a denominator-regularized accuracy family.
class SingularDenominator : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Malformed frame or protocol violation on the wire.
class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what, std::optional<std::size_t> byte_offset = std::nullopt)
      : Error(byte_offset ? what + " at byte " + std::to_string(*byte_offset) : what), reason_(what),
        offset_(byte_offset) {}

  /// The message without the byte offset.
  const std::string& reason() const { return reason_; }
  std::size_t byte_offset() const { return offset_.value_or(0); }
  bool has_offset() const { return offset_.has_value(); }

 private:
  std::string reason_;
  std::optional<std::size_t> offset_;
};

/// A diagnostic was asked for with too few data points.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

}  // namespace ifl

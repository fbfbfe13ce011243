#pragma once

#include <stdexcept>
#include <string>

namespace stmrgnn {

// Violated precondition or API contract (wrong arity, negative weights, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor shapes that cannot be combined.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Temporal convolution applied to a sequence shorter than its kernel.
class SequenceTooShortError : public DimensionError {
 public:
  using DimensionError::DimensionError;
};

// NaN or Inf produced by a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// All nodes coincide, so distance-based weights are undefined.
class DegenerateGeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. `line` is 1-based, 0 when not applicable.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input whose content breaks a data rule (duplicate ids, gaps, negative demand).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or corrupted checkpoint archive.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint written for a different model configuration.
class IncompatibleCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace stmrgnn

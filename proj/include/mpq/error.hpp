#pragma once

#include <stdexcept>
#include <string>

namespace mpq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer geometry does not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Quantization range with hi <= lo.
class DegenerateRangeError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Malformed input file (CSV, CIFAR batch, JSON document).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// JSON document that parses but violates the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(std::size_t epoch, const std::string& what)
      : Error(what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace mpq

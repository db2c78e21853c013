#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cife {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or layer widths.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Math domain violation: log of a non-positive value, division by zero,
// probabilities outside [0, 1].
class DomainError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A structurally valid file whose contents break an invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed binary input. offset() is the byte position where decoding failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Non-finite loss during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cife

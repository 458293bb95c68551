#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmfl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or length disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value, unknown option or malformed config file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object that is not in the required state.
class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class BatchSizeError : public Error {
 public:
  using Error::Error;
};

class ScenarioError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file; `offset` is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace mmfl

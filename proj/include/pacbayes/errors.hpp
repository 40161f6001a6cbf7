#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pacbayes {

/// Invalid argument or violated precondition supplied by the caller.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base class for problems with input data files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class ConsistencyError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  IoError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Raised when an optimizer step produces or receives non-finite values.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::uint64_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}

  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

}  // namespace pacbayes

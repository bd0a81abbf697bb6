#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rfa {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary input. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Invalid configuration or parameter combination, detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation's precondition (dimension mismatch, out-of-range index).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input data that cannot be processed (sequence too short, degenerate training set).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures. The message names the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfa

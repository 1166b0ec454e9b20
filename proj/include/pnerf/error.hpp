#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace pnerf {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (exit code 2 at the CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse: shape mismatches, stale caches, empty batches.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File system failure; the message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during evaluation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::optional<long> ray = std::nullopt)
      : Error(ray ? what + " (ray " + std::to_string(*ray) + ")" : what), ray_index(ray) {}

  std::optional<long> ray_index;
};

/// Training aborted after consecutive non-finite losses (exit code 4).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace pnerf

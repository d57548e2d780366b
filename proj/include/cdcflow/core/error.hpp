#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdcflow {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user input: bad configuration values, unsupported options,
/// violated preconditions. The CLI maps these to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input (CSV, JSON). Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Malformed or incompatible binary container (gamma store, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during a computation: NaN, solver step budget, etc.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdcflow

#pragma once

#include <stdexcept>
#include <string>

namespace dacdm {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A backward pass was fed a cache produced by different (or since-updated) parameters.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// A loss or state became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dacdm

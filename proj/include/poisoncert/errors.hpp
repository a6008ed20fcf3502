#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace poisoncert {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Class statistics requested on data that lacks one of the labels.
class StatsError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A solver or oracle could not produce a usable answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace poisoncert

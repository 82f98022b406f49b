#pragma once

#include <stdexcept>
#include <string>

namespace hybridtrack {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric input is non-finite or outside its domain.
class InvalidValueError : public Error {
 public:
  using Error::Error;
};

/// Tensor or vector dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (empty trajectory, frame order, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss, gradient or activation.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Text input could not be parsed. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, int line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Configuration key or value rejected by the schema.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace hybridtrack

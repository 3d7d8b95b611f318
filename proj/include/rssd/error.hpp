#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rssd {

// Root of every error the library throws. `kind()` is a stable short tag
// used by the CLI for its machine-parseable error prefix.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

// Tensor shape disagreement. `axis()` names the offending axis or level.
class DimensionError : public Error {
 public:
  DimensionError(std::string axis, const std::string& what)
      : Error("dimension error on " + axis + ": " + what), axis_(std::move(axis)) {}
  const std::string& axis() const noexcept { return axis_; }
  const char* kind() const noexcept override { return "dimension"; }

 private:
  std::string axis_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data"; }
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "validation"; }
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }
  const char* kind() const noexcept override { return "parse"; }

 private:
  std::size_t line_;
};

class GenerationError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "generation"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

class LookupError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "lookup"; }
};

}  // namespace rssd

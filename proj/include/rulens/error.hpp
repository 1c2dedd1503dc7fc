#pragma once

#include <stdexcept>
#include <string>

namespace rulens {

// Base of every library error. The CLI maps `user_error()` to exit code 2 and
// everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool user_error() const { return true; }
};

// Malformed input text; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const { return source_; }
  std::size_t line() const { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

// Structurally valid input that violates a dataset or checkpoint invariant.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses, divergence and similar failures inside the numerics.
class NumericError : public Error {
 public:
  using Error::Error;
  bool user_error() const override { return false; }
};

}  // namespace rulens

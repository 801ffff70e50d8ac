#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace proxcsl {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed libsvm input. Carries the 1-based physical line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Violated precondition on an argument (dimension mismatch, bad ratio, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace proxcsl

#pragma once

#include <stdexcept>
#include <string>

namespace escm {

// Base of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed model or expression text; invalid structure (cycle, mask violation, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Expression syntax error with a byte offset into the source.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& msg, std::size_t pos)
      : ValidationError("at column " + std::to_string(pos + 1) + ": " + msg), pos_(pos) {}
  std::size_t position() const { return pos_; }

 private:
  std::size_t pos_;
};

// Evaluation left the expression's domain (log of non-positive, division by zero, overflow).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Newton / descent failure. Carries a human-readable diagnostic.
class SolverError : public Error {
 public:
  using Error::Error;
};

// Invalid request against a valid model: bad coordinate, pair precondition, bad surgery.
class QueryError : public Error {
 public:
  using Error::Error;
};

// Model lies outside the class an operation is defined for (e.g. global term in the reduction oracle).
class ClassViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace escm

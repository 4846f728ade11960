#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace m4c {

// Root of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input that is well-formed but violates a contract (bad ids, bad sizes, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// A broken internal invariant. Should be unreachable.
class InternalError : public Error {
 public:
  using Error::Error;
};

// Failures at run time that are not the caller's fault in a static sense:
// I/O problems, divergence during training, infeasible generation.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace m4c

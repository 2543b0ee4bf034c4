#pragma once

#include <stdexcept>
#include <string>

namespace bifctl {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input: bad sizes, violated preconditions, malformed files.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A mesh displacement would fold or collapse an element.
class TangledMesh : public Error {
 public:
  using Error::Error;
};

/// Numerically singular matrix during factorization.
class SingularMatrix : public Error {
 public:
  SingularMatrix(const std::string& what, long row) : Error(what), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

/// An iterative solver (Newton, eigen iteration, optimizer) did not converge.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration (mapped to exit code 2 by the CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace bifctl

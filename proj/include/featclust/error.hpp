#pragma once

#include <stdexcept>
#include <string>

namespace featclust {

/// Base for every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: violated preconditions, inconsistent geometry, malformed files.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A file exists but does not follow the expected byte or text layout.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Numerical breakdown (degenerate data, non-convergence that cannot be
/// recovered from).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace featclust

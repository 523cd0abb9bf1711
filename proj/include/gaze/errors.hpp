#pragma once

#include <stdexcept>
#include <string>

namespace gaze {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad shapes, out-of-range hyperparameters, malformed configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, truncated or corrupt files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed gradient checks.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace gaze

#pragma once

#include <stdexcept>
#include <string>

namespace s2fuse {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or sizes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Pixel values outside the domain an operation accepts.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An invalid scalar parameter (negative gamma, even kernel size, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input that is numerically degenerate for the requested estimator
/// (zero variance, zero band mean, rank-deficient covariance, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// File parsing and I/O failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Warnings always go to stderr; info lines only when verbose is set.
void warn(const std::string& message);
void info(const std::string& message);
void set_verbose(bool verbose);
bool verbose();

}  // namespace s2fuse

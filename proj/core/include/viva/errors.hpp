#pragma once

#include <stdexcept>
#include <string>

namespace viva {

// Bad input or configuration. The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class OverlapError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Failures detected while doing work (I/O, corruption, numerics). Exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NumericError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace viva

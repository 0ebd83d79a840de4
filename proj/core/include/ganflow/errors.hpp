#pragma once

#include <stdexcept>
#include <string>

namespace ganflow {

/// Bad input: shapes, configuration values, missing files. CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values, divergence, collapsed samplers. CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace ganflow

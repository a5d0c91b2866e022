#pragma once

#include <stdexcept>
#include <string>

namespace tiacam {

// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (CLI exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

// An iterative procedure failed to converge (CLI exit code 3).
struct ConvergenceError : Error {
  using Error::Error;
};

// Malformed or missing input data (CLI exit code 4).
struct DataError : Error {
  using Error::Error;
};

// Contract violation inside the tensor engine (shape mismatch, non-finite
// values, degenerate inputs). Messages name the offending primitive.
struct EngineError : Error {
  using Error::Error;
};

}  // namespace tiacam

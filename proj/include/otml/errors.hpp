#pragma once

#include <stdexcept>
#include <string>

namespace otml {

// Base class for every error thrown by the library. The C API maps each
// subclass to a status code; the CLI maps status codes to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape / geometry mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Math domain violation (log/sqrt of a negative, division by zero, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN/Inf, or non-finite data entered the engine.
// Message names the offending op.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff graph (non-scalar root, backward re-run, stale root).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Batch too small for an operation that needs sample statistics.
class BatchSizeError : public Error {
 public:
  using Error::Error;
};

// Bad configuration (unknown key, unparsable value, divisibility violations).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed persisted data (PGM header, checkpoint payload, problem files).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Iterative solver failed to reach its tolerance budget.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace otml

#pragma once

#include <stdexcept>
#include <string>

namespace rrp {

// Shape/rank disagreement between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf produced by a forward or backward pass, or fed to the optimizer.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that is well-formed but violates a documented constraint
// (out-of-bounds annotation, odd window size, unknown config key).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed bytes on disk: bad magic, truncated payload, bad JSON.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Payload shorter than its header promises.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Scene generation or augmentation could not satisfy its constraints.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rrp

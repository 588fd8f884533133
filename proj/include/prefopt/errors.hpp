#pragma once

#include <stdexcept>
#include <string>

namespace prefopt {

// Bad caller input: invalid token ids, empty sequences, malformed lines.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent or missing configuration (unknown keys, missing reference).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed computation graph (cross-tape operands, non-topological edges).
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite loss or gradient during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace prefopt

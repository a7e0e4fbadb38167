#pragma once

#include <stdexcept>
#include <string>

namespace dsformer {

/// Invalid configuration value or combination of values.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor shapes that do not conform for the requested operation.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Autograd graph misuse (reused after a parameter was updated, double backward).
class IntegrityError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// NaN or Inf appeared in a forward or backward pass.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed cell in an input file.
class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Structurally unusable input file (empty, missing header, ...).
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint failed its integrity check or ended early.
class CorruptionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class UnsupportedVersionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace dsformer

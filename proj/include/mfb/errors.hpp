#pragma once

#include <stdexcept>
#include <string>

namespace mfb {

// Tensor or layer dimensions do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value, unknown key, or bad flag.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// File could not be opened, read, or written; or content is malformed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A NaN/Inf appeared in a loss or gradient.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data or checkpoint does not match the expected model or vocabulary.
class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse of the autodiff graph (non-scalar root, double backward, ...).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace mfb

#pragma once

#include <stdexcept>
#include <string>

namespace disout {

// Every failure surfaced by the library derives from Error. The CLI maps the
// categories onto exit codes (see tools/disout_main.cpp).

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not chain, mismatched operands, empty reductions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range hyperparameters, unknown config keys, missing distortion state.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad user data, e.g. a label outside the class range.
class InputError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed IDX / CIFAR / checkpoint bytes.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace disout

#pragma once

#include <stdexcept>
#include <string>

namespace atp {

// Base for every error raised by the library. The CLI maps these to exit
// code 2 (data error); usage errors never reach this hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Image extents incompatible with the block size.
class InputSizeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or non-canonical serialized data.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A weight outside the ternary set {-alpha, 0, +alpha}.
class QuantizationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff engine (e.g. a second backward over one graph).
class GraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace atp

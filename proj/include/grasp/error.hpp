#pragma once

#include <stdexcept>
#include <string>

namespace grasp {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A manipulation model failed to produce an output or a gradient.
class ModelError : public Error {
 public:
  using Error::Error;
};

// The bridge peer violated the wire protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace grasp

#pragma once

#include <stdexcept>
#include <string>

namespace geocount {

/// Base class of every failure raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed user-supplied data (bad record, out-of-range field).
class InputError : public Error {
  using Error::Error;
};

/// Argument outside its mathematical domain (rate <= 0, sigma <= 0, ...).
class DomainError : public Error {
  using Error::Error;
};

/// Non-finite value where a finite one is required.
class NumericError : public Error {
  using Error::Error;
};

/// Tensor or vector dimensions do not line up.
class ShapeError : public Error {
  using Error::Error;
};

/// Operation invoked in the wrong state (missing cache, unresolved tile).
class StateError : public Error {
  using Error::Error;
};

/// Invalid configuration value or inconsistent configuration.
class ConfigError : public Error {
  using Error::Error;
};

/// Filesystem and serialization failures, including corrupt payloads.
class IoError : public Error {
  using Error::Error;
};

}  // namespace geocount

#pragma once

#include <stdexcept>
#include <string>

namespace nt {

/// Base of every library error. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (log of 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Data does not satisfy a precondition (malformed CSV, unsatisfiable split).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace nt

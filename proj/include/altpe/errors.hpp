#pragma once

#include <stdexcept>
#include <string>

namespace altpe {

// Every error the library raises derives from Error. The CLI maps the
// subclasses onto exit codes (usage 1, data 2, numeric 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or flag.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite argument to a periodic kernel.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Incompatible tensor / matrix shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Sequence longer than a configured maximum.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data (corpus, checkpoint, vocabulary).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN / Inf produced by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward on a non-scalar loss.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace altpe

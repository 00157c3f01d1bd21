#pragma once

#include <stdexcept>
#include <string>

namespace trimllm {

/// Base class for every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An index (class target, token, unit) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// The object is in the wrong state for the request (dead unit, missing grad).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A count exceeds what is available.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied input data (tokens, samples, files).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a formula.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or corrupted file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace trimllm

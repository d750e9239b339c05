#pragma once

#include <stdexcept>
#include <string>

namespace mat {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid configuration value or combination.
struct ConfigError : Error {
  using Error::Error;
};

// An API precondition was violated.
struct ContractError : Error {
  using Error::Error;
};

// A forward op produced NaN/Inf, or a gradient went non-finite.
struct NumericError : Error {
  using Error::Error;
};

// Bad runtime input: token id out of range, malformed data line.
struct InputError : Error {
  using Error::Error;
};

// Warm-start initialization mismatch.
struct InitError : Error {
  using Error::Error;
};

// Checkpoint/file problems, split by cause so callers can tell them apart.
struct IoError : Error {
  using Error::Error;
};
struct FormatError : IoError {
  using IoError::IoError;
};
struct VersionError : IoError {
  using IoError::IoError;
};
struct TruncationError : IoError {
  using IoError::IoError;
};

}  // namespace mat

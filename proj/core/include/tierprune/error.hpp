#pragma once

#include <stdexcept>
#include <string>

namespace tierprune {

/// Base class for every error raised by the library. Each subclass maps to
/// one failure category so callers can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of its valid range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad runtime input (empty dataset, label out of range, missing class).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A file does not follow the expected on-disk layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared in a computed value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An API was called in a state that does not allow it.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure (unwritable directory, unreadable file).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tierprune

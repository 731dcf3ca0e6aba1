#pragma once

#include <stdexcept>
#include <string>

namespace aarchive {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem-level failures: missing inputs, unwritable outputs.
class IoError : public Error {
public:
  using Error::Error;
};

/// A file exists but its contents cannot be interpreted.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Configuration rejected by schema or value validation.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// A request that is inconsistent with the data it operates on
/// (unknown anatomy, out-of-range index, degenerate input).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Valid input that this implementation deliberately does not handle
/// (exotic on-disk datatypes, 4D series, ...).
class UnsupportedError : public Error {
public:
  using Error::Error;
};

}  // namespace aarchive

#pragma once

#include <stdexcept>
#include <string>

namespace gunet {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor or layer dimension mismatch. Messages name the offending dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration (network spec, training config, CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem and image decode failures. Messages carry the path involved.
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint / array container violations: bad magic, version, CRC, truncation.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace gunet

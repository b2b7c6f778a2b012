#pragma once

#include <stdexcept>
#include <string>

namespace recnet {

// Root of the library's exception hierarchy. Everything thrown on purpose
// derives from this, so callers can catch recnet::Error at the boundary.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file contents (bad magic, truncated payload, wrong token count).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Operating-system level failures: missing files, unwritable paths.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Tensor shape mismatches; message carries the offending dimensions.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration or argument values (non-positive voxel size,
// inverted range bounds, unknown profile names, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Optimization aborted mid-run (non-finite loss component); the message
// names the step and the component that failed.
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& msg) : Error(msg) {}
};

}  // namespace recnet

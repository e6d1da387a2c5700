#pragma once

#include <stdexcept>
#include <string>

namespace sobbo {

/// Base class for all library errors.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration, malformed input files, bad arguments.
class config_error : public error {
 public:
  explicit config_error(const std::string& msg) : error(msg) {}
};

/// Tensor shape incompatibility; message names the op and the shapes.
class shape_error : public error {
 public:
  explicit shape_error(const std::string& msg) : error(msg) {}
};

/// NaN/Inf produced by an operation, diverged training, degenerate values.
class numeric_error : public error {
 public:
  explicit numeric_error(const std::string& msg) : error(msg) {}
};

}  // namespace sobbo

#pragma once

#include <stdexcept>
#include <string>

namespace pegrad {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shapes do not match what an operation requires.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(what) {}
};

// A convolution geometry is inconsistent with its operands (bad channel
// counts, non-positive output extent, ...). Messages name the offending axis.
class GeometryError : public Error {
 public:
  explicit GeometryError(const std::string& what) : Error(what) {}
};

// An index or extent is out of the permitted range.
class RangeError : public Error {
 public:
  explicit RangeError(const std::string& what) : Error(what) {}
};

// A benchmark / network configuration is invalid.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

}  // namespace pegrad

#pragma once

#include <stdexcept>
#include <string>

namespace tipsfuse {

// Error hierarchy. The CLI maps each family onto a distinct exit code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible tensor or array shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed, solver breakdown, undefined statistic.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input files and records.
class DataError : public Error {
 public:
  using Error::Error;
};

// Bad configuration keys/values or command usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. running backward twice on one tape.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace tipsfuse

#pragma once

#include <stdexcept>
#include <string>

namespace edgekt {

/// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/layer dimension disagreements. Messages name both shapes.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Invalid run configuration or network spec (CLI exit code 2).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Malformed data or checkpoint files (CLI exit code 3).
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

/// Non-finite values where finite ones are required (CLI exit code 4).
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace edgekt

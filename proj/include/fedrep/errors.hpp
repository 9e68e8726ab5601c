#pragma once

#include <stdexcept>
#include <string>

namespace fedrep {

// Invalid configuration, shape mismatch, out-of-range argument.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value produced where finite arithmetic was expected.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// I/O failure on an artifact path.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fedrep

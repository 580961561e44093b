#pragma once

#include <stdexcept>
#include <string>

namespace pflego {

// Error taxonomy used across the library. Each maps to one failure class:
// bad wiring (ConfigError), bad caller data (InputError), non-finite math
// (NumericError), stale/invalid object state (StateError), malformed files
// (FormatError), bad command-line usage (UsageError).

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pflego

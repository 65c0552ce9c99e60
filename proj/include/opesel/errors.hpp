#pragma once

#include <stdexcept>
#include <string>

namespace opesel {

// Error categories that the CLI maps to distinct exit codes.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SanityError : std::runtime_error {
  explicit SanityError(const std::string& what) : std::runtime_error(what) {}
};

struct HashMismatchError : std::runtime_error {
  explicit HashMismatchError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace opesel

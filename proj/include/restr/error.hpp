#pragma once

#include <stdexcept>
#include <string>

namespace restr {

// Invalid configuration, shapes or arguments. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Corrupt or missing on-disk data. The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Failure of a runtime procedure (e.g. autodiff misuse, generation retries exhausted).
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace restr

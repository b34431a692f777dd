#pragma once

#include <stdexcept>
#include <string>

namespace cdan {

// Shape mismatches and invalid hyperparameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: empty inputs, length mismatches, non-scalar losses.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed maze, manifest, config or checkpoint files.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cdan

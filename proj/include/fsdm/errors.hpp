#pragma once

#include <stdexcept>
#include <string>

namespace fsdm {

// Invalid user-facing configuration (bad hyperparameter, unknown key, wrong mode).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a precondition of an operation (shape mismatch, t out of range).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace fsdm

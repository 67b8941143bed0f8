#pragma once

#include <stdexcept>
#include <string>

namespace evident {

// Input outside an operation's mathematical domain (negative evidence, empty
// batch, bad shapes, out-of-range rates).
class DomainError : public std::invalid_argument {
 public:
  explicit DomainError(const std::string& what) : std::invalid_argument(what) {}
};

// Caller used a component outside its contract, e.g. asking a softmax model
// for uncertainty.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Training diverged or a numerical routine failed after retries.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace evident

#pragma once
#include <stdexcept>
#include <string>

namespace mlsynth {

struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SyntaxError : std::runtime_error {
  SyntaxError(const std::string& msg, std::size_t pos)
      : std::runtime_error(msg + " at position " + std::to_string(pos)), position(pos) {}
  std::size_t position;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace mlsynth

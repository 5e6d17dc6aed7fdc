#pragma once

#include <stdexcept>
#include <string>

namespace soundstage {

// Thrown for contract violations on inputs (bad shapes, invalid configs,
// out-of-range arguments). Distinct from std::runtime_error so callers can
// tell "you gave me garbage" apart from "something failed underneath".
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& msg) : std::invalid_argument(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw InputError(msg);
}

}  // namespace soundstage

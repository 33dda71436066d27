#pragma once

#include <stdexcept>
#include <string>

namespace psrkit {

// Bad input: malformed files, schema violations, failed preconditions.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical procedure failed (non-convergence, degenerate fit).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw UserError(msg);
}

}  // namespace psrkit

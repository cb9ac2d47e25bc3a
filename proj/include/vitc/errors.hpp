#pragma once

#include <stdexcept>
#include <string>

namespace vitc {

// Numerical divergence (non-finite loss or runaway objective). The CLI maps
// this to its own exit code, distinct from validation failures.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vitc

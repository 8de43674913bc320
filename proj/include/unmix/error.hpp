#pragma once

#include <stdexcept>
#include <string>

namespace unmix {

// Bad arguments, shape mismatches, violated invariants.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// File system and format problems.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered during numerics (divergence signal).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace unmix

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace iene {

/// Invalid configuration value (bad hyperparameter, mismatched widths, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid runtime input (out-of-range index, empty mask, bad shape, ...).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Persisted data cannot be read back (missing group file, shape mismatch).
struct CorruptionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerically degenerate input (constant columns, rank-deficient design).
struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss; carries the diagnostic context.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace iene

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "iene/nets/params.hpp"
#include "iene/util/rng.hpp"

namespace iene::nets {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int num_checked = 0;
  int num_skipped = 0;  // probes straddling a rectifier kink
};

/// Compares reverse-mode gradients of `build_loss` against central finite
/// differences (default step 1e-4) on up to `max_probes` randomly chosen
/// parameter entries across `groups`. The relative error denominator is
/// max(1, |analytic|, |numeric|). Probes where the half-step and full-step
/// estimates disagree sit on a non-smooth point and are skipped.
GradCheckResult gradient_check(const std::function<ad::Var(Binder&)>& build_loss, ParameterSet& params,
                               const std::vector<std::string>& groups, int max_probes,
                               std::uint64_t seed, double step = 1e-4);

}  // namespace iene::nets

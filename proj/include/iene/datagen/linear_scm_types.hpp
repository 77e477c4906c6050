// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <vector>

// Plain data produced by the linear structural causal model generator.
// Kept logic-free in its own header so the oracle module can consume the
// struct without pulling in any generator or trainer code.

namespace iene::datagen {

struct LinearSCMSample {
  std::vector<Eigen::MatrixXd> X;  // per environment, N_e x d observed designs
  std::vector<Eigen::VectorXd> Y;  // per environment targets
  Eigen::VectorXd beta;            // ground-truth invariant coefficients (d_inv)
  Eigen::MatrixXd W;               // mixing, d x (d_inv + d_spu)
  Eigen::MatrixXd W_tilde;         // unmixing restricted to invariant rows, d_inv x d
  std::vector<double> shift_scales;
  int d_inv = 0;
  int d_spu = 0;

  int dim() const { return d_inv + d_spu; }
  int num_envs() const { return static_cast<int>(X.size()); }
};

}  // namespace iene::datagen

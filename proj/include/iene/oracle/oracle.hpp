// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "iene/datagen/linear_scm_types.hpp"
#include "iene/graph/graph.hpp"

// Independent ground-truth computations. Nothing in here shares code with
// the trainer or the objectives module: agreement between these routines and
// the production path is evidence, not tautology.

namespace iene::oracle {

struct OlsSolution {
  std::vector<Eigen::VectorXd> per_env;  // one coefficient vector per environment
  Eigen::VectorXd pooled;
  std::vector<double> residual_variance;
  double pooled_residual_variance = 0.0;
};

/// Exact normal-equation least squares per environment and pooled.
/// Throws DegenerateInputError on rank-deficient designs.
OlsSolution per_env_ols(const datagen::LinearSCMSample& sample);

struct IdentifiabilityReport {
  // Max pairwise Euclidean distance between per-environment coefficients.
  double invariant_disagreement = 0.0;     // predictor on the unmixed invariant block
  double unrestricted_disagreement = 0.0;  // predictor on the full observed features
  Eigen::VectorXd pooled_coefficients;     // pooled OLS on observed features
  double max_spurious_pooled_weight = 0.0; // max |pooled coef| over observed spurious coords
  double invariant_threshold = 0.05;       // derived from generator signal-to-noise
  double spurious_threshold = 0.5;
  bool invariant_predictor_stable = false;
  bool environments_distinguishable = false;
  bool identifiable = false;
  double disagreement = 0.0;  // headline value selected by restricted_to_invariant
};

IdentifiabilityReport check_linear_identifiability(const datagen::LinearSCMSample& sample,
                                                   bool restricted_to_invariant);

/// Brute-force (vrex, nvrex) over a per-node/per-environment loss table.
/// Population variance, explicit double loops.
std::pair<double, double> brute_variance(const Eigen::MatrixXd& losses, const graph::Mask& node_mask);
std::pair<double, double> brute_variance(const Eigen::MatrixXd& losses);

/// Linear-kernel HSIC via explicit double centering of the Gram matrices.
double hsic_statistic(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

/// Fraction of row-permuted HSIC values >= the observed statistic.
/// Requires num_perms >= 100.
double hsic_permutation_test(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int num_perms,
                             std::uint64_t seed);

/// Histogram mutual information (nats) between a real variable and integer
/// side information, with `bins` equal-width bins.
double histogram_mi(const Eigen::VectorXd& values, const std::vector<int>& side, int bins = 16);

/// Mean histogram MI across the columns of a feature block.
double histogram_mi_block(const Eigen::MatrixXd& block, const std::vector<int>& side, int bins = 16);

// --- Closed-form / first-principles classification probes -------------------

struct LinearProbe {
  Eigen::MatrixXd weights;  // (d+1) x C, last row is the bias
};

LinearProbe fit_least_squares_probe(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, int num_classes,
                                    double ridge = 1e-6);

LinearProbe fit_logistic_probe(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, int num_classes,
                               int iters = 400, double lr = 0.5);

Eigen::MatrixXd probe_scores(const LinearProbe& probe, const Eigen::MatrixXd& x);
double probe_accuracy(const LinearProbe& probe, const Eigen::MatrixXd& x, const Eigen::VectorXi& y);
double probe_log_loss(const LinearProbe& probe, const Eigen::MatrixXd& x, const Eigen::VectorXi& y);

}  // namespace iene::oracle

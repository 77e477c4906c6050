// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "iene/ad/autodiff.hpp"
#include "iene/graph/graph.hpp"
#include "iene/nets/encoders.hpp"

namespace iene::extrapolate {

/// Relaxed and discrete edge-flip masks for one extrapolated view.
/// theta lives only on the candidate pairs (all existing edges plus sampled
/// non-edges); the discrete mask keeps the top-budget entries.
struct InterventionMask {
  std::vector<std::pair<int, int>> candidates;  // i < j
  Eigen::VectorXd theta;                        // in [0,1], one per candidate
  int budget = 0;
  std::optional<Eigen::MatrixXd> discrete;  // S, binary symmetric zero-diagonal
};

/// A + (E - I - 2A) .* S: toggles exactly the masked pairs.
/// Throws InputError when S is not binary/symmetric/zero-diagonal.
Eigen::MatrixXd apply_structural_intervention(const Eigen::MatrixXd& adjacency,
                                              const Eigen::MatrixXd& mask);

/// Dense relaxed surrogate A + (E - I - 2A) .* Theta on the full matrix.
Eigen::MatrixXd relaxed_view(const Eigen::MatrixXd& adjacency, const Eigen::MatrixXd& theta);

/// Autodiff relaxed view materialized only on the candidate pairs; gradients
/// flow into `theta` (one entry per candidate, applied symmetrically).
ad::Var relaxed_view(const Eigen::MatrixXd& adjacency,
                     const std::vector<std::pair<int, int>>& candidates, const ad::Var& theta);

/// All existing edges plus up to num_sample * N uniformly sampled non-edges.
std::vector<std::pair<int, int>> candidate_pairs(const graph::Graph& g, int num_sample,
                                                 std::uint64_t seed);

enum class ViewMethod { kLearned, kRandomFlip, kGradFlip };

struct ViewConfig {
  int steps = 30;
  int budget = 0;         // absolute number of flipped pairs per view
  double lr = 0.5;        // projected-gradient step on theta
  int num_sample = 3;     // sampled non-edges per node
  double theta_init = 0.01;
  ViewMethod method = ViewMethod::kLearned;
};

struct ViewResult {
  std::vector<graph::Graph> views;          // K graphs sharing features with g
  std::vector<InterventionMask> masks;      // per view
  std::vector<double> initial_loss, final_loss;  // per view, learned method only
};

/// Optimizes K relaxed masks against the frozen environment recognizer
/// (view k is pushed toward inferred environment k), then discretizes each
/// by keeping the top-budget candidates.
ViewResult optimize_views(const graph::Graph& g, nets::ParameterSet& params,
                          const nets::ModelConfig& cfg, int num_views, const ViewConfig& vc,
                          std::uint64_t seed);

}  // namespace iene::extrapolate

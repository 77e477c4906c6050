// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iene/graph/graph.hpp"
#include "iene/nets/encoders.hpp"

namespace iene::partition {

/// What feeds the environment classifier w. kLearned is the trained
/// environmental representation u(G); the other two exist for the
/// auxiliary-information ablation.
enum class AuxSource { kLearned, kNoise, kFeatureBlock };

struct StageOneConfig {
  int annealing_iters = 50;
  int disentangle_iters = 5;
  int K = 2;
  double lambda = 4.0;
  double eta = 1.0;
  double lr_heads = 0.01;           // adam: c
  double lr_phi = 0.05;             // sgd: phi
  double lr_env_model = 0.05;       // sgd: u, d
  double lr_router = 0.1;           // sgd: w
  double lr_env_classifiers = 0.05; // adam: c_1..c_K
  double anneal_frac = 0.3;      // lambda ramps linearly over this head fraction
  // Inner rounds of {fit c_1..c_K, update w} per annealing iteration. The
  // adversary plays the inner max of the bilevel objective; giving it several
  // rounds per outer step keeps it competitive with the (phi, c) player.
  int adversary_rounds = 5;
  // Extra w steps per round fitting the analytic best-response assignment
  // (per node, the environment whose classifier currently explains it best).
  // Plain gradient ascent alone stalls on the collapsed saddle of the game.
  int router_fit_steps = 2;
  // Random restarts of the adversary (w and c_1..c_K) spread over the
  // post-ramp iterations. The inner max is nonconvex with a flat saddle at
  // the uniform assignment; restarts give independent ignition draws and the
  // best partition across the trajectory is kept.
  int router_restarts = 3;
  // Fit each c_k on its mass-normalized weighted risk (same argmin as the
  // 1/n-weighted risk, but conditioning keeps small clusters trainable).
  bool normalize_env_classifier_fit = true;
  // Harden rho to argmax responsibilities for the c_k fit (classification-EM
  // flavor); the penalty itself always uses the soft rho.
  bool harden_env_classifier_fit = true;
  AuxSource aux = AuxSource::kLearned;
  int aux_block_begin = 0, aux_block_end = 0;  // kFeatureBlock column range
  std::uint64_t seed = 0;
};

struct TraceRecord {
  int step = 0;
  std::string name;
  double value = 0.0;
};

struct StageOneResult {
  nets::ParameterSet params;
  std::vector<graph::EnvironmentAssignment> rho_train;  // one per training graph
  std::vector<TraceRecord> trace;
};

/// Called after every annealing iteration; used by the pipeline for
/// validation tracking and early snapshots.
using AnnealObserver = std::function<void(int iteration, nets::ParameterSet& params)>;

/// Alternating stage-one loop: disentangle (u,d), fit the per-environment
/// classifiers, minimize L_s over (phi,c), maximize L_s over w.
/// Aborts with DivergenceError on a non-finite loss.
StageOneResult stage_one_train(const graph::MultiGraphDataset& ds, const nets::ModelConfig& cfg,
                               const StageOneConfig& sc, const AnnealObserver& observer = {});

/// Builds the model configuration implied by dataset + stage-one settings
/// (fills dims, K, and the env-classifier input width for ablation sources).
nets::ModelConfig make_model_config(const graph::MultiGraphDataset& ds, nets::EncoderConfig encoder,
                                    const StageOneConfig& sc, int mlp_hidden = 32);

struct PartitionReport {
  double agreement = 0.0;           // best over environment relabelings
  std::vector<int> env_sizes;       // nodes assigned to each inferred environment
  std::vector<int> empty_envs;      // inferred environments with no nodes
};

/// Permutation-maximized agreement between argmax(rho) and the ground-truth
/// environment labels (brute force over relabelings; K <= 6).
PartitionReport env_partition_report(const Eigen::MatrixXd& rho, const std::vector<int>& true_env);

}  // namespace iene::partition

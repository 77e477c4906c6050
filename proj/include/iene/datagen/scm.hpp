// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iene/datagen/linear_scm_types.hpp"
#include "iene/graph/graph.hpp"

namespace iene::datagen {

struct SbmParams {
  double intra_p = 0.05;  // edge probability within a label block
  double inter_p = 0.01;  // edge probability across label blocks
};

/// Configuration for the synthetic structural-causal-model dataset family.
///
/// Feature columns are laid out as [invariant | spurious | irrelevant].
/// The invariant block is a fixed class codebook shared by every environment;
/// the spurious block goes through a per-environment codebook; the irrelevant
/// block is label-independent but environment-shifted. Causal variants:
///   a: feature-only shift (per-environment spurious codebooks)
///   b: variant a plus environment-dependent intra-class edge probability
///   c: variant a plus an environment shift on one invariant coordinate
struct SCMConfig {
  int num_nodes = 300;  // per graph
  int num_classes = 2;
  int d_inv = 4;
  int d_spu = 4;
  int d_irr = 4;
  int num_train_envs = 2;  // K_true
  double spurious_strength = 1.0;
  bool test_flip = false;
  char causal_variant = 'a';
  SbmParams graph_model;
  std::uint64_t seed = 0;

  int num_val_graphs = 1;
  int num_test_graphs = 3;
  // Spurious codebook interpolation t per test graph: codebook = (1-2t) * mean
  // of the train codebooks. Empty -> all 1.0 under test_flip, else all 0.0.
  std::vector<double> test_shifts;
  // t for validation graphs; negative -> 0.5 under test_flip (neutralized
  // spurious block, so selection cannot exploit it), else 0.0.
  double val_shift = -1.0;
  double env_codebook_spread = 1.0;  // distance of train env codebooks from their mean
  double irr_env_spread = 1.0;       // per-environment mean offset of the irrelevant block
  double structure_delta = 0.05;     // variant b: extra intra-class edge prob in train env 0
  double noise_scale = 0.3;
  std::string metric = "accuracy";
};

/// Which feature columns play which causal role, plus the codebooks used.
/// Tests may read this; the trainer must not.
struct GroundTruth {
  int d_inv = 0, d_spu = 0, d_irr = 0;
  Eigen::MatrixXd inv_codebook;                  // C x d_inv
  std::vector<Eigen::MatrixXd> train_codebooks;  // per train env, C x d_spu
  Eigen::MatrixXd mean_codebook;                 // C x d_spu
  std::vector<double> test_shifts;
  std::vector<std::string> column_roles;  // "invariant" | "spurious" | "irrelevant"

  int spurious_begin() const { return d_inv; }
  int spurious_end() const { return d_inv + d_spu; }
};

struct GeneratedDataset {
  graph::MultiGraphDataset dataset;
  GroundTruth truth;
};

/// One SBM graph per training environment plus validation and test graphs.
GeneratedDataset generate_scm_dataset(const SCMConfig& cfg);

/// Replaces the spurious block of `g` with strength * codebook[label] + noise.
/// `d_inv` locates the block start; the codebook width sets the block width.
graph::Graph apply_artificial_transformation(const graph::Graph& g, const Eigen::MatrixXd& env_codebook,
                                             double strength, int d_inv, std::uint64_t seed);

/// Linear SCM of the identifiability analysis: Y = X_i beta + eps,
/// X_s = a_e Y + noise, observed X = W [X_i; X_s] with orthogonal mixing W.
LinearSCMSample generate_linear_scm(int num_envs, int samples_per_env, int d_inv, int d_spu,
                                    const std::vector<double>& env_shift_scales, std::uint64_t seed,
                                    const Eigen::VectorXd* beta_override = nullptr);

void write_ground_truth(const std::filesystem::path& dataset_dir, const GroundTruth& truth);
GroundTruth read_ground_truth(const std::filesystem::path& dataset_dir);

}  // namespace iene::datagen

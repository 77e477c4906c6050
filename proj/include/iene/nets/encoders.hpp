// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "iene/ad/autodiff.hpp"
#include "iene/graph/graph.hpp"
#include "iene/nets/params.hpp"

namespace iene::nets {

enum class Backbone { kMeanAgg, kSampledNeighbor, kAttention, kGeneralizedPageRank };

std::string backbone_name(Backbone b);
Backbone backbone_from_name(const std::string& name);

/// Shared shape of the invariant encoder phi and the environmental encoder u:
/// rectifier activations inside, hyperbolic tangent on the output layer.
struct EncoderConfig {
  Backbone backbone = Backbone::kMeanAgg;
  int layers = 2;
  int hidden_dim = 32;
  int output_dim = 32;
  int gpr_steps = 10;        // propagation steps of the PageRank-style backbone
  int sage_sample_cap = 15;  // neighbor sample cap of the sampled backbone
  double leaky_slope = 0.2;

  /// Hop radius a node's output row can depend on.
  int receptive_field() const {
    return backbone == Backbone::kGeneralizedPageRank ? gpr_steps : layers;
  }
};

struct ModelConfig {
  EncoderConfig encoder;
  int mlp_hidden = 32;
  int num_envs = 2;  // K
  int feature_dim = 0;
  int num_classes = 0;
  // Input width of the environment classifier w. Zero means u's output; the
  // auxiliary-information ablation feeds w a raw feature block instead.
  int env_feature_dim = 0;

  int env_input_dim() const { return env_feature_dim > 0 ? env_feature_dim : encoder.output_dim; }
};

struct LearningRates {
  double heads = 0.01;           // adam: c
  double encoder = 0.05;         // sgd: phi
  double env_model = 0.05;       // sgd: u, d
  double router = 0.1;           // sgd: w
  double env_classifiers = 0.05; // adam: c_1..c_K (the inner best-response players)
};

/// Builds the full parameter set {phi, u, w, d, c, c_1..c_K} with fan-in
/// uniform init. Encoder output layers get a small-scale init so the early
/// environment assignment stays near uniform.
ParameterSet build_parameter_set(const ModelConfig& cfg, std::uint64_t seed,
                                 const LearningRates& lrs = {});

/// Throws ConfigError when `params` does not match the shapes that
/// build_parameter_set would produce for `cfg`.
void validate_parameter_shapes(const ParameterSet& params, const ModelConfig& cfg);

// --- Differentiable forwards ------------------------------------------------
// `adjacency` may be a relaxed (continuous) matrix; gradients flow through
// the propagation operator. `sample_seed` only affects the sampled-neighbor
// backbone; pass nullopt to disable sampling (relaxed adjacencies must).

ad::Var encoder_forward(const EncoderConfig& cfg, Binder& bind, const std::string& group,
                        const ad::Var& adjacency, const ad::Var& features,
                        std::optional<std::uint64_t> sample_seed);

/// Two-layer perceptron head: relu hidden layer, linear output.
ad::Var mlp_forward(Binder& bind, const std::string& group, const ad::Var& input);

/// Symmetrically normalized adjacency with self-loops as an autodiff node.
ad::Var normalized_adjacency_var(const ad::Var& adjacency);

// --- Plain-value entry points ----------------------------------------------

Eigen::MatrixXd forward_phi(ParameterSet& params, const ModelConfig& cfg, const graph::Graph& g,
                            std::uint64_t sample_seed = 0);

graph::EnvironmentAssignment forward_env_weights(ParameterSet& params, const ModelConfig& cfg,
                                                 const graph::Graph& g, int num_envs,
                                                 std::uint64_t sample_seed = 0);

Eigen::MatrixXd forward_classifier(ParameterSet& params, const std::string& group,
                                   const Eigen::MatrixXd& h);

Eigen::MatrixXd forward_reconstructor(ParameterSet& params, const Eigen::MatrixXd& h_e,
                                      const Eigen::MatrixXd& h_i);

}  // namespace iene::nets

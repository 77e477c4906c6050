// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "iene/ad/autodiff.hpp"
#include "iene/graph/graph.hpp"
#include "iene/nets/encoders.hpp"

// Scalar objectives of the invariant-learning method. Each objective has one
// canonical differentiable form over autodiff nodes; the plain double
// overloads evaluate the same graph on constants, so the trainer and the
// reported values can never drift apart.

namespace iene::objectives {

/// Per-node losses across K environments/views plus the node selection.
struct LossMatrix {
  Eigen::MatrixXd values;  // N x K
  graph::Mask node_mask;   // empty selects every node
};

enum class PenaltyKind { kNvRex, kVRex };

// --- Core differentiable pieces ---------------------------------------------

/// Mean of an Nx1 column over the masked nodes. Throws on an empty selection.
ad::Var masked_mean(const ad::Var& column, const graph::Mask& mask);

/// Per-node cross-entropy column (numerically stable log-softmax).
ad::Var per_node_cross_entropy(const ad::Var& scores, const Eigen::VectorXi& labels);

ad::Var erm_risk(const ad::Var& scores, const Eigen::VectorXi& labels, const graph::Mask& mask);
double erm_risk(const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels, const graph::Mask& mask);

/// (1/n) sum over masked nodes of rho[v,k] * loss[v].
ad::Var weighted_env_risk(const ad::Var& per_node_loss, const ad::Var& rho, int k,
                          const graph::Mask& mask);
double weighted_env_risk(const Eigen::VectorXd& per_node_loss, const Eigen::MatrixXd& rho, int k,
                         const graph::Mask& mask);

/// sum_k [ weighted risk of the shared classifier - weighted risk of the
/// environment classifier ]. Environments whose total weight is below 1e-6
/// contribute exactly zero.
ad::Var invariance_penalty(const ad::Var& loss_shared, const std::vector<ad::Var>& loss_envs,
                           const ad::Var& rho, const graph::Mask& mask);
double invariance_penalty(const Eigen::VectorXd& loss_shared,
                          const std::vector<Eigen::VectorXd>& loss_envs, const Eigen::MatrixXd& rho,
                          const graph::Mask& mask);

/// Linear-kernel empirical HSIC with double centering, 1/(n-1)^2 scaling.
ad::Var hsic_empirical(const ad::Var& x, const ad::Var& y);
double hsic_empirical(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

/// HSIC(x,y) / sqrt(HSIC(x,x) HSIC(y,y)) in [0,1]. Throws
/// DegenerateInputError when either self-HSIC vanishes (constant input).
ad::Var hsic_normalized(const ad::Var& x, const ad::Var& y);
double hsic_normalized(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

/// Graph-level variance penalty: population variance across environments of
/// the masked mean loss.
ad::Var vrex(const ad::Var& losses, const graph::Mask& mask);
double vrex(const LossMatrix& losses);

/// Node-level variance penalty: masked mean of each node's population
/// variance across environments.
ad::Var nvrex(const ad::Var& losses, const graph::Mask& mask);
double nvrex(const LossMatrix& losses);

ad::Var variance_penalty(PenaltyKind kind, const ad::Var& losses, const graph::Mask& mask);

/// L_s = erm + lambda * penalty.
ad::Var partition_objective(const ad::Var& erm, const ad::Var& penalty, double lambda);
double partition_objective(double erm, double penalty, double lambda);

// --- Graph-level composite objectives ----------------------------------------
// These build the relevant forwards through `bind`; which parameter groups
// receive gradients is decided entirely by the Binder's trainable set.

/// Reconstruction + eta * normalized HSIC between u(G) and phi(G).
ad::Var disentangle_loss(nets::Binder& bind, const nets::ModelConfig& cfg, const graph::Graph& g,
                         double eta, std::optional<std::uint64_t> sample_seed = std::nullopt);
double disentangle_loss(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                        const graph::Graph& g, double eta,
                        std::optional<std::uint64_t> sample_seed = std::nullopt);

/// rho = softmax(w(u(G))) for a (possibly relaxed) adjacency.
ad::Var environment_weights(nets::Binder& bind, const nets::ModelConfig& cfg, const ad::Var& adjacency,
                            const ad::Var& features, std::optional<std::uint64_t> sample_seed);

/// Mean over views k and masked nodes of CE(w(u(view_k)), k).
ad::Var extrapolation_loss(nets::Binder& bind, const nets::ModelConfig& cfg,
                           const std::vector<ad::Var>& view_adjacencies, const ad::Var& features,
                           const graph::Mask& mask,
                           std::optional<std::uint64_t> sample_seed = std::nullopt);
double extrapolation_loss(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                          const std::vector<graph::Graph>& views, const graph::Mask& mask,
                          std::optional<std::uint64_t> sample_seed = std::nullopt);

/// Per-view per-node CE losses of the shared classifier, as an N x K matrix.
ad::Var view_loss_matrix(nets::Binder& bind, const nets::ModelConfig& cfg,
                         const std::vector<graph::Graph>& views, const Eigen::VectorXi& labels,
                         std::optional<std::uint64_t> sample_seed = std::nullopt);

/// L_d = mean view risk + beta * variance penalty, from a prebuilt loss matrix.
ad::Var dynamic_objective_from_losses(const ad::Var& view_losses, const graph::Mask& mask, double beta,
                                      PenaltyKind penalty = PenaltyKind::kNvRex);

/// L_d over discrete views through the current encoder and classifier.
ad::Var dynamic_objective(nets::Binder& bind, const nets::ModelConfig& cfg,
                          const std::vector<graph::Graph>& views, const Eigen::VectorXi& labels,
                          const graph::Mask& mask, double beta,
                          PenaltyKind penalty = PenaltyKind::kNvRex,
                          std::optional<std::uint64_t> sample_seed = std::nullopt);

/// The four-term combined objective: erm on the original graph, lambda *
/// invariance penalty, mean view risk, beta * variance penalty.
ad::Var combined_objective(nets::Binder& bind, const nets::ModelConfig& cfg, const graph::Graph& g,
                           const std::vector<graph::Graph>& views, double lambda, double beta,
                           PenaltyKind penalty = PenaltyKind::kNvRex,
                           std::optional<std::uint64_t> sample_seed = std::nullopt);

}  // namespace iene::objectives

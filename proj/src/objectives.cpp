// SPDX-License-Identifier: Apache-2.0
#include "iene/objectives/losses.hpp"

#include <cmath>

#include "iene/util/errors.hpp"

namespace iene::objectives {

using ad::Matrix;
using ad::Var;

namespace {

Matrix mask_weights(const graph::Mask& mask, Eigen::Index n) {
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != n)
    throw InputError("mask length does not match node count");
  int count = mask.empty() ? static_cast<int>(n) : graph::mask_count(mask);
  if (count == 0) throw InputError("empty node mask");
  Matrix w = Matrix::Zero(n, 1);
  for (Eigen::Index v = 0; v < n; ++v)
    if (mask.empty() || mask[v]) w(v, 0) = 1.0 / static_cast<double>(count);
  return w;
}

}  // namespace

Var masked_mean(const Var& column, const graph::Mask& mask) {
  if (column.cols() != 1) throw InputError("masked_mean expects a column");
  return ad::sum_all(ad::cwise_mul(column, Var::constant(mask_weights(mask, column.rows()))));
}

Var per_node_cross_entropy(const Var& scores, const Eigen::VectorXi& labels) {
  return ad::cross_entropy_rows(scores, labels);
}

Var erm_risk(const Var& scores, const Eigen::VectorXi& labels, const graph::Mask& mask) {
  return masked_mean(per_node_cross_entropy(scores, labels), mask);
}

double erm_risk(const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels, const graph::Mask& mask) {
  return erm_risk(Var::constant(scores), labels, mask).scalar();
}

Var weighted_env_risk(const Var& per_node_loss, const Var& rho, int k, const graph::Mask& mask) {
  if (k < 0 || k >= rho.cols()) throw InputError("weighted_env_risk: environment index out of range");
  if (per_node_loss.rows() != rho.rows()) throw InputError("weighted_env_risk: row mismatch");
  Matrix w = mask_weights(mask, per_node_loss.rows());
  Var weighted = ad::cwise_mul(ad::col(rho, k), per_node_loss);
  return ad::sum_all(ad::cwise_mul(weighted, Var::constant(w)));
}

double weighted_env_risk(const Eigen::VectorXd& per_node_loss, const Eigen::MatrixXd& rho, int k,
                         const graph::Mask& mask) {
  return weighted_env_risk(Var::constant(Matrix(per_node_loss)), Var::constant(rho), k, mask).scalar();
}

Var invariance_penalty(const Var& loss_shared, const std::vector<Var>& loss_envs, const Var& rho,
                       const graph::Mask& mask) {
  const int num_envs = static_cast<int>(rho.cols());
  if (static_cast<int>(loss_envs.size()) != num_envs)
    throw InputError("invariance_penalty: one environment classifier loss per environment required");
  Matrix masked = (mask_weights(mask, rho.rows()).array() > 0.0).cast<double>();
  Var total = Var::constant(0.0);
  for (int k = 0; k < num_envs; ++k) {
    // Near-empty inferred environments contribute exactly zero.
    double mass = rho.value().col(k).dot(masked.col(0));
    if (mass < 1e-6) continue;
    Var gap = ad::sub(weighted_env_risk(loss_shared, rho, k, mask),
                      weighted_env_risk(loss_envs[k], rho, k, mask));
    total = ad::add(total, gap);
  }
  return total;
}

double invariance_penalty(const Eigen::VectorXd& loss_shared,
                          const std::vector<Eigen::VectorXd>& loss_envs, const Eigen::MatrixXd& rho,
                          const graph::Mask& mask) {
  std::vector<Var> envs;
  envs.reserve(loss_envs.size());
  for (const auto& l : loss_envs) envs.push_back(Var::constant(Matrix(l)));
  return invariance_penalty(Var::constant(Matrix(loss_shared)), envs, Var::constant(rho), mask).scalar();
}

Var hsic_empirical(const Var& x, const Var& y) {
  if (x.rows() != y.rows()) throw InputError("hsic: row mismatch");
  if (x.rows() < 4) throw InputError("hsic: need at least 4 rows");
  const double n = static_cast<double>(x.rows());
  Var cross = ad::matmul(ad::transpose(ad::center_columns(x)), ad::center_columns(y));
  return ad::scale(ad::sum_all(ad::square(cross)), 1.0 / ((n - 1.0) * (n - 1.0)));
}

double hsic_empirical(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  return hsic_empirical(Var::constant(x), Var::constant(y)).scalar();
}

Var hsic_normalized(const Var& x, const Var& y) {
  Var sxx = hsic_empirical(x, x);
  Var syy = hsic_empirical(y, y);
  if (sxx.scalar() < 1e-12 || syy.scalar() < 1e-12)
    throw DegenerateInputError("hsic_normalized: constant input has zero self-HSIC");
  return ad::div_scalar(hsic_empirical(x, y), ad::sqrt(ad::cwise_mul(sxx, syy)));
}

double hsic_normalized(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  return hsic_normalized(Var::constant(x), Var::constant(y)).scalar();
}

namespace {

void check_variance_input(const Var& losses) {
  if (losses.cols() < 2) throw ConfigError("variance penalty needs at least 2 environments");
}

}  // namespace

Var vrex(const Var& losses, const graph::Mask& mask) {
  check_variance_input(losses);
  Matrix w = mask_weights(mask, losses.rows());
  Var env_means = ad::matmul(Var::constant(Matrix(w.transpose())), losses);  // 1 x K
  return ad::sub(ad::mean_all(ad::square(env_means)), ad::square(ad::mean_all(env_means)));
}

double vrex(const LossMatrix& losses) {
  return vrex(Var::constant(losses.values), losses.node_mask).scalar();
}

Var nvrex(const Var& losses, const graph::Mask& mask) {
  check_variance_input(losses);
  Var per_node_mean = ad::row_mean(losses);
  Var per_node_sq = ad::row_mean(ad::square(losses));
  Var per_node_var = ad::sub(per_node_sq, ad::square(per_node_mean));
  return masked_mean(per_node_var, mask);
}

double nvrex(const LossMatrix& losses) {
  return nvrex(Var::constant(losses.values), losses.node_mask).scalar();
}

Var variance_penalty(PenaltyKind kind, const Var& losses, const graph::Mask& mask) {
  return kind == PenaltyKind::kNvRex ? nvrex(losses, mask) : vrex(losses, mask);
}

Var partition_objective(const Var& erm, const Var& penalty, double lambda) {
  if (lambda < 0.0) throw ConfigError("partition_objective: lambda must be >= 0");
  return ad::add(erm, ad::scale(penalty, lambda));
}

double partition_objective(double erm, double penalty, double lambda) {
  if (lambda < 0.0) throw ConfigError("partition_objective: lambda must be >= 0");
  return erm + lambda * penalty;
}

Var disentangle_loss(nets::Binder& bind, const nets::ModelConfig& cfg, const graph::Graph& g,
                     double eta, std::optional<std::uint64_t> sample_seed) {
  if (eta < 0.0) throw ConfigError("disentangle_loss: eta must be >= 0");
  Var adjacency = Var::constant(g.adjacency);
  Var features = Var::constant(g.features);
  Var h_i = nets::encoder_forward(cfg.encoder, bind, "phi", adjacency, features, sample_seed);
  Var h_e = nets::encoder_forward(cfg.encoder, bind, "u", adjacency, features, sample_seed);
  Var recon = nets::mlp_forward(bind, "d", ad::concat_cols(h_e, h_i));
  Var mse = ad::mean_all(ad::square(ad::sub(recon, features)));
  if (eta == 0.0) return mse;
  return ad::add(mse, ad::scale(hsic_normalized(h_e, h_i), eta));
}

double disentangle_loss(nets::ParameterSet& params, const nets::ModelConfig& cfg, const graph::Graph& g,
                        double eta, std::optional<std::uint64_t> sample_seed) {
  nets::Binder bind(params, {});
  return disentangle_loss(bind, cfg, g, eta, sample_seed).scalar();
}

Var environment_weights(nets::Binder& bind, const nets::ModelConfig& cfg, const Var& adjacency,
                        const Var& features, std::optional<std::uint64_t> sample_seed) {
  Var h_e = nets::encoder_forward(cfg.encoder, bind, "u", adjacency, features, sample_seed);
  return ad::row_softmax(nets::mlp_forward(bind, "w", h_e));
}

Var extrapolation_loss(nets::Binder& bind, const nets::ModelConfig& cfg,
                       const std::vector<Var>& view_adjacencies, const Var& features,
                       const graph::Mask& mask, std::optional<std::uint64_t> sample_seed) {
  const int num_views = static_cast<int>(view_adjacencies.size());
  if (num_views < 1) throw InputError("extrapolation_loss: need at least one view");
  if (bind.params().group("w").arrays[3].cols() != num_views)
    throw ConfigError("extrapolation_loss: view count does not match the env classifier width");
  Var total = Var::constant(0.0);
  for (int k = 0; k < num_views; ++k) {
    Var h_e = nets::encoder_forward(cfg.encoder, bind, "u", view_adjacencies[k], features, sample_seed);
    Var logits = nets::mlp_forward(bind, "w", h_e);
    Eigen::VectorXi target = Eigen::VectorXi::Constant(features.rows(), k);
    total = ad::add(total, masked_mean(ad::cross_entropy_rows(logits, target), mask));
  }
  return ad::scale(total, 1.0 / static_cast<double>(num_views));
}

double extrapolation_loss(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                          const std::vector<graph::Graph>& views, const graph::Mask& mask,
                          std::optional<std::uint64_t> sample_seed) {
  nets::Binder bind(params, {});
  std::vector<Var> adjacencies;
  adjacencies.reserve(views.size());
  for (const auto& v : views) adjacencies.push_back(Var::constant(v.adjacency));
  Var features = Var::constant(views.front().features);
  return extrapolation_loss(bind, cfg, adjacencies, features, mask, sample_seed).scalar();
}

Var view_loss_matrix(nets::Binder& bind, const nets::ModelConfig& cfg,
                     const std::vector<graph::Graph>& views, const Eigen::VectorXi& labels,
                     std::optional<std::uint64_t> sample_seed) {
  if (views.empty()) throw InputError("view_loss_matrix: need at least one view");
  Var losses;
  for (std::size_t k = 0; k < views.size(); ++k) {
    Var h = nets::encoder_forward(cfg.encoder, bind, "phi", Var::constant(views[k].adjacency),
                                  Var::constant(views[k].features), sample_seed);
    Var scores = nets::mlp_forward(bind, "c", h);
    Var ce = ad::cross_entropy_rows(scores, labels);
    losses = k == 0 ? ce : ad::concat_cols(losses, ce);
  }
  return losses;
}

Var dynamic_objective_from_losses(const Var& view_losses, const graph::Mask& mask, double beta,
                                  PenaltyKind penalty) {
  if (beta < 0.0) throw ConfigError("dynamic objective: beta must be >= 0");
  Var mean_risk = masked_mean(ad::row_mean(view_losses), mask);
  if (beta == 0.0) return mean_risk;
  return ad::add(mean_risk, ad::scale(variance_penalty(penalty, view_losses, mask), beta));
}

Var dynamic_objective(nets::Binder& bind, const nets::ModelConfig& cfg,
                      const std::vector<graph::Graph>& views, const Eigen::VectorXi& labels,
                      const graph::Mask& mask, double beta, PenaltyKind penalty,
                      std::optional<std::uint64_t> sample_seed) {
  return dynamic_objective_from_losses(view_loss_matrix(bind, cfg, views, labels, sample_seed), mask,
                                       beta, penalty);
}

Var combined_objective(nets::Binder& bind, const nets::ModelConfig& cfg, const graph::Graph& g,
                       const std::vector<graph::Graph>& views, double lambda, double beta,
                       PenaltyKind penalty, std::optional<std::uint64_t> sample_seed) {
  if (lambda < 0.0 || beta < 0.0) throw ConfigError("combined objective: lambda, beta must be >= 0");
  Var adjacency = Var::constant(g.adjacency);
  Var features = Var::constant(g.features);
  const graph::Mask& mask = g.train_mask;

  Var h_i = nets::encoder_forward(cfg.encoder, bind, "phi", adjacency, features, sample_seed);
  Var shared_loss = ad::cross_entropy_rows(nets::mlp_forward(bind, "c", h_i), g.labels);
  Var risk = masked_mean(shared_loss, mask);

  Var rho = environment_weights(bind, cfg, adjacency, features, sample_seed);
  std::vector<Var> env_losses;
  for (int k = 1; k <= cfg.num_envs; ++k)
    env_losses.push_back(
        ad::cross_entropy_rows(nets::mlp_forward(bind, "c_" + std::to_string(k), h_i), g.labels));
  Var penalty_inv = invariance_penalty(shared_loss, env_losses, rho, mask);

  Var dynamic = dynamic_objective(bind, cfg, views, g.labels, mask, beta, penalty, sample_seed);
  return ad::add(ad::add(risk, ad::scale(penalty_inv, lambda)), dynamic);
}

}  // namespace iene::objectives

// SPDX-License-Identifier: Apache-2.0
#include "iene/extrapolate/intervention.hpp"

#include <algorithm>
#include <numeric>

#include "iene/objectives/losses.hpp"
#include "iene/util/errors.hpp"
#include "iene/util/rng.hpp"

namespace iene::extrapolate {

using ad::Matrix;
using ad::Var;

Eigen::MatrixXd apply_structural_intervention(const Eigen::MatrixXd& adjacency,
                                              const Eigen::MatrixXd& mask) {
  const Eigen::Index n = adjacency.rows();
  if (mask.rows() != n || mask.cols() != n)
    throw InputError("apply_structural_intervention: shape mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mask(i, i) != 0.0) throw InputError("apply_structural_intervention: mask diagonal must be zero");
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask(i, j) != 0.0 && mask(i, j) != 1.0)
        throw InputError("apply_structural_intervention: mask must be binary");
      if (mask(i, j) != mask(j, i))
        throw InputError("apply_structural_intervention: mask must be symmetric");
    }
  }
  Matrix ones = Matrix::Ones(n, n);
  Matrix identity = Matrix::Identity(n, n);
  return adjacency + (ones - identity - 2.0 * adjacency).cwiseProduct(mask);
}

Eigen::MatrixXd relaxed_view(const Eigen::MatrixXd& adjacency, const Eigen::MatrixXd& theta) {
  const Eigen::Index n = adjacency.rows();
  Matrix ones = Matrix::Ones(n, n);
  Matrix identity = Matrix::Identity(n, n);
  return adjacency + (ones - identity - 2.0 * adjacency).cwiseProduct(theta);
}

ad::Var relaxed_view(const Eigen::MatrixXd& adjacency,
                     const std::vector<std::pair<int, int>>& candidates, const ad::Var& theta) {
  Eigen::VectorXd coeff(candidates.size());
  for (std::size_t m = 0; m < candidates.size(); ++m) {
    auto [i, j] = candidates[m];
    if (i == j) throw InputError("relaxed_view: diagonal candidate");
    coeff[m] = 1.0 - 2.0 * adjacency(i, j);
  }
  return ad::scatter_symmetric(adjacency, candidates, coeff, theta);
}

std::vector<std::pair<int, int>> candidate_pairs(const graph::Graph& g, int num_sample,
                                                 std::uint64_t seed) {
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::vector<bool>> taken(g.num_nodes, std::vector<bool>(g.num_nodes, false));
  for (int i = 0; i < g.num_nodes; ++i)
    for (int j = i + 1; j < g.num_nodes; ++j)
      if (g.adjacency(i, j) != 0.0) {
        pairs.emplace_back(i, j);
        taken[i][j] = true;
      }
  util::Rng rng = util::make_rng(seed);
  std::uniform_int_distribution<int> pick(0, g.num_nodes - 1);
  const long want = static_cast<long>(num_sample) * g.num_nodes;
  long placed = 0;
  long attempts = 0;
  const long max_attempts = 50L * want + 100;
  while (placed < want && attempts < max_attempts) {
    ++attempts;
    int i = pick(rng), j = pick(rng);
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    if (taken[i][j]) continue;
    taken[i][j] = true;
    pairs.emplace_back(i, j);
    ++placed;
  }
  return pairs;
}

namespace {

Matrix discrete_mask_from_theta(const Eigen::VectorXd& theta,
                                const std::vector<std::pair<int, int>>& candidates, int budget, int n) {
  std::vector<int> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return theta[a] > theta[b]; });
  Matrix s = Matrix::Zero(n, n);
  for (int r = 0; r < budget; ++r) {
    auto [i, j] = candidates[order[r]];
    s(i, j) = 1.0;
    s(j, i) = 1.0;
  }
  return s;
}

graph::Graph view_from_mask(const graph::Graph& g, const Matrix& s) {
  graph::Graph view = g;  // features, labels and masks shared bitwise
  view.adjacency = apply_structural_intervention(g.adjacency, s);
  return view;
}

}  // namespace

ViewResult optimize_views(const graph::Graph& g, nets::ParameterSet& params,
                          const nets::ModelConfig& cfg, int num_views, const ViewConfig& vc,
                          std::uint64_t seed) {
  if (vc.budget < 1) throw ConfigError("optimize_views: budget must be >= 1");
  if (num_views < 2) throw ConfigError("optimize_views: need at least 2 views");

  std::vector<std::pair<int, int>> candidates =
      candidate_pairs(g, vc.num_sample, util::derive_seed(seed, "candidates"));
  if (vc.budget > static_cast<int>(candidates.size()))
    throw ConfigError("optimize_views: budget exceeds the candidate pair set");

  ViewResult result;
  const Var features = Var::constant(g.features);
  const graph::Mask& mask = graph::mask_count(g.train_mask) > 0 ? g.train_mask : graph::Mask{};

  for (int k = 0; k < num_views; ++k) {
    InterventionMask im;
    im.candidates = candidates;
    im.budget = vc.budget;
    im.theta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(candidates.size()), vc.theta_init);

    if (vc.method == ViewMethod::kRandomFlip) {
      // Ablation baseline: budget random flips, no learning signal.
      std::vector<int> order(candidates.size());
      std::iota(order.begin(), order.end(), 0);
      util::Rng rng = util::make_rng(util::derive_seed(seed, "random-flip", k));
      std::shuffle(order.begin(), order.end(), rng);
      Matrix s = Matrix::Zero(g.num_nodes, g.num_nodes);
      for (int r = 0; r < vc.budget; ++r) {
        auto [i, j] = candidates[order[r]];
        s(i, j) = s(j, i) = 1.0;
      }
      im.discrete = s;
      result.views.push_back(view_from_mask(g, s));
      result.masks.push_back(std::move(im));
      continue;
    }

    auto view_loss = [&](const Eigen::VectorXd& theta_value, bool with_grad)
        -> std::pair<double, Eigen::VectorXd> {
      nets::Binder bind(params, {});
      Var theta = with_grad ? Var::leaf(Matrix(theta_value)) : Var::constant(Matrix(theta_value));
      Var adjacency = relaxed_view(g.adjacency, candidates, theta);
      Var h_e = nets::encoder_forward(cfg.encoder, bind, "u", adjacency, features, std::nullopt);
      Var logits = nets::mlp_forward(bind, "w", h_e);
      Eigen::VectorXi target = Eigen::VectorXi::Constant(g.num_nodes, k);
      Var loss = objectives::masked_mean(ad::cross_entropy_rows(logits, target), mask);
      if (!with_grad) return {loss.scalar(), {}};
      loss.backward();
      return {loss.scalar(), theta.grad().size() > 0 ? Eigen::VectorXd(theta.grad().col(0))
                                                     : Eigen::VectorXd::Zero(theta_value.size())};
    };

    if (vc.method == ViewMethod::kGradFlip) {
      // Ablation baseline: one gradient evaluation, flip the most loss-
      // decreasing candidates.
      auto [loss0, grad] = view_loss(im.theta, true);
      result.initial_loss.push_back(loss0);
      std::vector<int> order(candidates.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return grad[a] < grad[b]; });
      Matrix s = Matrix::Zero(g.num_nodes, g.num_nodes);
      for (int r = 0; r < vc.budget; ++r) {
        auto [i, j] = candidates[order[r]];
        s(i, j) = s(j, i) = 1.0;
      }
      im.discrete = s;
      result.views.push_back(view_from_mask(g, s));
      result.final_loss.push_back(loss0);
      result.masks.push_back(std::move(im));
      continue;
    }

    // Projected gradient descent on the relaxed mask.
    double first = 0.0, last = 0.0;
    for (int step = 0; step < vc.steps; ++step) {
      auto [loss, grad] = view_loss(im.theta, true);
      if (step == 0) first = loss;
      last = loss;
      im.theta -= vc.lr * grad;
      im.theta = im.theta.cwiseMax(0.0).cwiseMin(1.0);
    }
    result.initial_loss.push_back(first);
    result.final_loss.push_back(last);

    Matrix s = discrete_mask_from_theta(im.theta, candidates, vc.budget, g.num_nodes);
    im.discrete = s;
    result.views.push_back(view_from_mask(g, s));
    result.masks.push_back(std::move(im));
  }
  return result;
}

}  // namespace iene::extrapolate

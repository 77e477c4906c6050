// SPDX-License-Identifier: Apache-2.0
#include "iene/objectives/losses.hpp"

#include <doctest.h>

#include <random>

#include "iene/datagen/scm.hpp"
#include "iene/nets/gradcheck.hpp"
#include "iene/oracle/oracle.hpp"
#include "iene/util/errors.hpp"

using namespace iene;
using ad::Var;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng, int n) {
  Eigen::MatrixXd m = random_matrix(rng, n, n);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
}

graph::Graph random_graph(std::mt19937_64& rng, int n, int d, double p) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (coin(rng) < p) edges.emplace_back(i, j);
  graph::Graph g = graph::make_graph(n, 2, edges, random_matrix(rng, n, d), Eigen::VectorXi::Zero(n));
  for (int i = 0; i < n; ++i) g.labels[i] = i % 2;
  g.train_mask = graph::full_mask(n);
  return g;
}

}  // namespace

TEST_CASE("erm_risk spec examples") {
  graph::Mask all;
  // Perfect one-hot scores: loss ~ 0.
  Eigen::MatrixXd perfect = Eigen::MatrixXd::Zero(4, 3);
  Eigen::VectorXi labels(4);
  labels << 0, 1, 2, 1;
  for (int i = 0; i < 4; ++i) perfect(i, labels[i]) = 40.0;
  CHECK(objectives::erm_risk(perfect, labels, all) < 1e-6);

  // Uniform scores: ln C.
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Zero(5, 7);
  Eigen::VectorXi labels7 = Eigen::VectorXi::Zero(5);
  CHECK(objectives::erm_risk(uniform, labels7, all) == doctest::Approx(std::log(7.0)).epsilon(1e-12));

  // Fitted probe on the linear SCM matches the independent mean log-loss.
  auto sample = datagen::generate_linear_scm(2, 500, 2, 2, {1.0, -1.0}, 3);
  Eigen::VectorXi ylab(500);
  for (int i = 0; i < 500; ++i) ylab[i] = sample.Y[0][i] > 0 ? 1 : 0;
  auto probe = oracle::fit_logistic_probe(sample.X[0], ylab, 2, 100);
  Eigen::MatrixXd scores = oracle::probe_scores(probe, sample.X[0]);
  CHECK(objectives::erm_risk(scores, ylab, all) ==
        doctest::Approx(oracle::probe_log_loss(probe, sample.X[0], ylab)).epsilon(1e-9));

  // Empty mask is an input error.
  CHECK_THROWS_AS(objectives::erm_risk(perfect, labels, graph::empty_mask(4)), InputError);
}

TEST_CASE("weighted_env_risk spec examples") {
  std::mt19937_64 rng(5);
  graph::Mask all;
  const int n = 10;
  Eigen::VectorXd losses = random_matrix(rng, n, 1).cwiseAbs();

  // One-hot assignment to environment 0.
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, 2);
  onehot.col(0).setOnes();
  CHECK(objectives::weighted_env_risk(losses, onehot, 0, all) ==
        doctest::Approx(losses.mean()).epsilon(1e-12));
  CHECK(objectives::weighted_env_risk(losses, onehot, 1, all) == doctest::Approx(0.0));

  // Uniform assignment: each environment risk is half the pooled risk.
  Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(n, 2, 0.5);
  CHECK(objectives::weighted_env_risk(losses, uniform, 0, all) ==
        doctest::Approx(losses.mean() / 2.0).epsilon(1e-12));

  // Random case equals the hand-computed dot product / n.
  Eigen::MatrixXd rho = random_matrix(rng, n, 3).cwiseAbs();
  for (int i = 0; i < n; ++i) rho.row(i) /= rho.row(i).sum();
  double hand = rho.col(2).dot(losses) / n;
  CHECK(objectives::weighted_env_risk(losses, rho, 2, all) == doctest::Approx(hand).epsilon(1e-12));

  CHECK_THROWS_AS(objectives::weighted_env_risk(losses, rho, 3, all), InputError);
}

TEST_CASE("invariance_penalty spec examples and invariances") {
  std::mt19937_64 rng(7);
  graph::Mask all;
  const int n = 8;
  Eigen::VectorXd shared = random_matrix(rng, n, 1).cwiseAbs();
  Eigen::MatrixXd rho = random_matrix(rng, n, 2).cwiseAbs();
  for (int i = 0; i < n; ++i) rho.row(i) /= rho.row(i).sum();

  // Identical environment classifiers: exactly zero.
  CHECK(objectives::invariance_penalty(shared, {shared, shared}, rho, all) == doctest::Approx(0.0));

  // A 4-node case where each c_k beats c on its environment.
  Eigen::VectorXd c_loss(4), c1_loss(4), c2_loss(4);
  c_loss << 1.0, 1.0, 1.0, 1.0;
  c1_loss << 0.2, 0.4, 1.0, 1.0;
  c2_loss << 1.0, 1.0, 0.1, 0.3;
  Eigen::MatrixXd hard(4, 2);
  hard << 1, 0, 1, 0, 0, 1, 0, 1;
  // Hand computation: k=0 gap (1.0+1.0-0.2-0.4)/4, k=1 gap (1.0+1.0-0.1-0.3)/4.
  double expected = (2.0 - 0.6) / 4.0 + (2.0 - 0.4) / 4.0;
  CHECK(objectives::invariance_penalty(c_loss, {c1_loss, c2_loss}, hard, {}) ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(objectives::invariance_penalty(c_loss, {c1_loss, c2_loss}, hard, {}) > 0.0);

  // K=1 with all-ones rho reduces to the risk gap.
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 1);
  CHECK(objectives::invariance_penalty(c_loss, {c1_loss}, ones, {}) ==
        doctest::Approx(c_loss.mean() - c1_loss.mean()).epsilon(1e-12));

  // Adding a constant to both shared and env losses leaves the penalty
  // unchanged (rho rows sum to one).
  Eigen::VectorXd c_shift = c_loss.array() + 3.7;
  Eigen::VectorXd c1_shift = c1_loss.array() + 3.7;
  Eigen::VectorXd c2_shift = c2_loss.array() + 3.7;
  CHECK(objectives::invariance_penalty(c_shift, {c1_shift, c2_shift}, hard, {}) ==
        doctest::Approx(expected).epsilon(1e-10));

  // An empty inferred environment contributes zero rather than dividing.
  Eigen::MatrixXd empty_env(4, 2);
  empty_env << 1, 0, 1, 0, 1, 0, 1, 0;
  double only_k0 = objectives::invariance_penalty(c_loss, {c1_loss, c2_loss}, empty_env, {});
  CHECK(only_k0 == doctest::Approx((4.0 - 0.2 - 0.4 - 1.0 - 1.0) / 4.0).epsilon(1e-12));
}

TEST_CASE("hsic contract") {
  std::mt19937_64 rng(11);
  Eigen::MatrixXd x = random_matrix(rng, 500, 8);

  // Self-similarity is exactly one.
  CHECK(objectives::hsic_normalized(x, x) == doctest::Approx(1.0).epsilon(1e-9));

  // Independent Gaussians score low and fail the permutation oracle.
  Eigen::MatrixXd y = random_matrix(rng, 500, 8);
  CHECK(objectives::hsic_normalized(x, y) < 0.05);
  CHECK(oracle::hsic_permutation_test(x, y, 200, 13) > 0.01);

  // A fixed row permutation of x is statistically independent again.
  Eigen::MatrixXd xp(500, 8);
  std::vector<int> perm(500);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int i = 0; i < 500; ++i) xp.row(i) = x.row(perm[i]);
  CHECK(objectives::hsic_normalized(x, xp) < 0.05);
  CHECK(oracle::hsic_permutation_test(x, xp, 200, 17) > 0.01);

  // Degenerate input: constant matrix.
  Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(500, 3);
  CHECK_THROWS_AS(objectives::hsic_normalized(x, constant), DegenerateInputError);

  // Agreement with the independent double-centering implementation.
  Eigen::MatrixXd a = random_matrix(rng, 60, 5), b = random_matrix(rng, 60, 4);
  CHECK(objectives::hsic_empirical(a, b) == doctest::Approx(oracle::hsic_statistic(a, b)).epsilon(1e-10));
}

TEST_CASE("hsic_normalized is invariant to rotation and positive rescaling") {
  std::mt19937_64 rng(13);
  Eigen::MatrixXd x = random_matrix(rng, 80, 6);
  Eigen::MatrixXd y = random_matrix(rng, 80, 6) + 0.5 * x;
  double base = objectives::hsic_normalized(x, y);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd q = random_orthogonal(rng, 6);
    double rotated = objectives::hsic_normalized(Eigen::MatrixXd(x * q), y);
    CHECK(rotated == doctest::Approx(base).epsilon(1e-8));
    double scaled = objectives::hsic_normalized(Eigen::MatrixXd(2.7 * x), Eigen::MatrixXd(0.3 * y));
    CHECK(scaled == doctest::Approx(base).epsilon(1e-8));
  }
}

TEST_CASE("variance penalties: hand cases, oracle equivalence, dominance") {
  objectives::LossMatrix constant{Eigen::MatrixXd::Constant(6, 3, 1.3), {}};
  CHECK(objectives::vrex(constant) == doctest::Approx(0.0));
  CHECK(objectives::nvrex(constant) == doctest::Approx(0.0));

  objectives::LossMatrix cross{Eigen::MatrixXd(2, 2), {}};
  cross.values << 1.0, 0.0, 0.0, 1.0;
  CHECK(objectives::vrex(cross) == doctest::Approx(0.0));
  CHECK(objectives::nvrex(cross) == doctest::Approx(0.25));

  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> nodes(1, 8), envs(2, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    objectives::LossMatrix l{random_matrix(rng, nodes(rng), envs(rng)).cwiseAbs(), {}};
    double v = objectives::vrex(l);
    double nv = objectives::nvrex(l);
    auto [bv, bnv] = oracle::brute_variance(l.values);
    CHECK(std::abs(v - bv) < 1e-12);
    CHECK(std::abs(nv - bnv) < 1e-12);
    CHECK(nv >= v - 1e-12);
  }

  objectives::LossMatrix single{Eigen::MatrixXd::Ones(3, 1), {}};
  CHECK_THROWS_AS(objectives::vrex(single), ConfigError);
  CHECK_THROWS_AS(objectives::nvrex(single), ConfigError);
}

TEST_CASE("partition objective arithmetic") {
  CHECK(objectives::partition_objective(0.6, 0.2, 0.0) == doctest::Approx(0.6));
  CHECK(objectives::partition_objective(0.6, 0.0, 11.0) == doctest::Approx(0.6));
  CHECK(objectives::partition_objective(0.7, 0.05, 4.0) == doctest::Approx(0.9));
  CHECK_THROWS_AS(objectives::partition_objective(0.5, 0.1, -1.0), ConfigError);
}

TEST_CASE("disentangle loss composes reconstruction and normalized HSIC") {
  std::mt19937_64 rng(19);
  graph::Graph g = random_graph(rng, 24, 5, 0.25);
  nets::ModelConfig cfg;
  cfg.encoder.hidden_dim = 8;
  cfg.encoder.output_dim = 8;
  cfg.mlp_hidden = 8;
  cfg.num_envs = 2;
  cfg.feature_dim = 5;
  cfg.num_classes = 2;
  auto params = nets::build_parameter_set(cfg, 23);

  Eigen::MatrixXd h_i = nets::forward_phi(params, cfg, g);
  nets::Binder frozen(params, {});
  Eigen::MatrixXd h_e =
      nets::encoder_forward(cfg.encoder, frozen, "u", Var::constant(g.adjacency),
                            Var::constant(g.features), std::nullopt)
          .value();
  Eigen::MatrixXd recon = nets::forward_reconstructor(params, h_e, h_i);
  double mse = (recon - g.features).squaredNorm() / (recon.rows() * recon.cols());
  double hsic = objectives::hsic_normalized(h_e, h_i);

  CHECK(objectives::disentangle_loss(params, cfg, g, 0.0) == doctest::Approx(mse).epsilon(1e-12));
  CHECK(objectives::disentangle_loss(params, cfg, g, 1.0) ==
        doctest::Approx(mse + hsic).epsilon(1e-12));
  CHECK(objectives::disentangle_loss(params, cfg, g, 1.0) > 0.0);
}

TEST_CASE("extrapolation loss: uniform weights give ln K and the arithmetic matches rho") {
  std::mt19937_64 rng(29);
  graph::Graph g = random_graph(rng, 20, 4, 0.2);
  graph::Graph view2 = g;
  view2.adjacency(0, 1) = view2.adjacency(1, 0) = 1.0 - view2.adjacency(0, 1);

  nets::ModelConfig cfg;
  cfg.encoder.hidden_dim = 8;
  cfg.encoder.output_dim = 8;
  cfg.mlp_hidden = 8;
  cfg.num_envs = 2;
  cfg.feature_dim = 4;
  cfg.num_classes = 2;
  auto params = nets::build_parameter_set(cfg, 31);
  std::vector<graph::Graph> views{g, view2};

  // Zero env classifier: uniform rho, loss is exactly ln K.
  for (auto& a : params.group("w").arrays) a.setZero();
  CHECK(objectives::extrapolation_loss(params, cfg, views, g.train_mask) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  // Random parameters: equals the hand-computed mean cross-entropy of rho.
  params = nets::build_parameter_set(cfg, 37);
  double hand = 0.0;
  for (int k = 0; k < 2; ++k) {
    graph::EnvironmentAssignment rho = nets::forward_env_weights(params, cfg, views[k], 2);
    for (int v = 0; v < g.num_nodes; ++v) hand += -std::log(rho.rho(v, k));
  }
  hand /= 2.0 * g.num_nodes;
  CHECK(objectives::extrapolation_loss(params, cfg, views, g.train_mask) ==
        doctest::Approx(hand).epsilon(1e-9));
}

TEST_CASE("dynamic objective: hand case and degenerate views") {
  // beta=1 with the [[1,0],[0,1]] loss matrix and mean risk 0.5 gives 0.75.
  Eigen::MatrixXd cross(2, 2);
  cross << 1.0, 0.0, 0.0, 1.0;
  Var l = Var::constant(cross);
  CHECK(objectives::dynamic_objective_from_losses(l, {}, 1.0).scalar() == doctest::Approx(0.75));
  CHECK(objectives::dynamic_objective_from_losses(l, {}, 0.0).scalar() == doctest::Approx(0.5));

  // Identical views: the variance term vanishes.
  std::mt19937_64 rng(41);
  graph::Graph g = random_graph(rng, 15, 4, 0.2);
  nets::ModelConfig cfg;
  cfg.encoder.hidden_dim = 8;
  cfg.encoder.output_dim = 8;
  cfg.mlp_hidden = 8;
  cfg.num_envs = 2;
  cfg.feature_dim = 4;
  cfg.num_classes = 2;
  auto params = nets::build_parameter_set(cfg, 43);
  nets::Binder bind(params, {});
  std::vector<graph::Graph> views{g, g};
  double with_penalty =
      objectives::dynamic_objective(bind, cfg, views, g.labels, g.train_mask, 5.0).scalar();
  nets::Binder bind2(params, {});
  double without =
      objectives::dynamic_objective(bind2, cfg, views, g.labels, g.train_mask, 0.0).scalar();
  CHECK(with_penalty == doctest::Approx(without).epsilon(1e-12));
}

TEST_CASE("gradient integrity of every objective path") {
  std::mt19937_64 rng(47);
  graph::Graph g = random_graph(rng, 20, 4, 0.25);
  graph::Graph view2 = g;
  for (int i = 0; i < 4; ++i) {
    int a = i, b = 10 + i;
    view2.adjacency(a, b) = view2.adjacency(b, a) = 1.0 - view2.adjacency(a, b);
  }
  std::vector<graph::Graph> views{g, view2};

  nets::ModelConfig cfg;
  cfg.encoder.hidden_dim = 6;
  cfg.encoder.output_dim = 6;
  cfg.mlp_hidden = 6;
  cfg.num_envs = 2;
  cfg.feature_dim = 4;
  cfg.num_classes = 2;
  auto params = nets::build_parameter_set(cfg, 53);

  SUBCASE("disentangle loss through u and d") {
    auto build = [&](nets::Binder& bind) { return objectives::disentangle_loss(bind, cfg, g, 1.0); };
    auto r = nets::gradient_check(build, params, {"u", "d"}, 150, 3);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("invariance penalty through phi, c and the env classifiers") {
    auto build = [&](nets::Binder& bind) {
      Var h = nets::encoder_forward(cfg.encoder, bind, "phi", Var::constant(g.adjacency),
                                    Var::constant(g.features), std::nullopt);
      Var shared = ad::cross_entropy_rows(nets::mlp_forward(bind, "c", h), g.labels);
      Var rho = objectives::environment_weights(bind, cfg, Var::constant(g.adjacency),
                                                Var::constant(g.features), std::nullopt);
      std::vector<Var> envs;
      for (int k = 1; k <= 2; ++k)
        envs.push_back(ad::cross_entropy_rows(nets::mlp_forward(bind, "c_" + std::to_string(k), h),
                                              g.labels));
      return objectives::invariance_penalty(shared, envs, rho, g.train_mask);
    };
    auto r = nets::gradient_check(build, params, {"phi", "c", "c_1", "c_2", "w", "u"}, 200, 5);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("nvrex through phi on two views") {
    auto build = [&](nets::Binder& bind) {
      Var losses = objectives::view_loss_matrix(bind, cfg, views, g.labels);
      return objectives::nvrex(losses, g.train_mask);
    };
    auto r = nets::gradient_check(build, params, {"phi", "c"}, 200, 7);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("extrapolation loss through u and w") {
    auto build = [&](nets::Binder& bind) {
      std::vector<Var> adjacencies{Var::constant(views[0].adjacency), Var::constant(views[1].adjacency)};
      return objectives::extrapolation_loss(bind, cfg, adjacencies, Var::constant(g.features),
                                            g.train_mask);
    };
    auto r = nets::gradient_check(build, params, {"u", "w"}, 150, 9);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("combined objective through the stage-two trainable groups") {
    auto build = [&](nets::Binder& bind) {
      return objectives::combined_objective(bind, cfg, g, views, 4.0, 1.0);
    };
    auto r = nets::gradient_check(build, params, {"phi", "c"}, 200, 11);
    CHECK(r.max_rel_error < 1e-4);
  }
}

// SPDX-License-Identifier: Apache-2.0
#include "iene/nets/encoders.hpp"

#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <random>

#include "iene/ad/autodiff.hpp"
#include "iene/nets/checkpoint.hpp"
#include "iene/nets/gradcheck.hpp"
#include "iene/util/errors.hpp"

using namespace iene;
using ad::Var;
namespace fs = std::filesystem;

namespace {

graph::Graph random_graph(std::mt19937_64& rng, int n, int d, double p, int num_classes = 2) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (coin(rng) < p) edges.emplace_back(i, j);
  Eigen::MatrixXd feats(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) feats(i, j) = normal(rng);
  Eigen::VectorXi labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % num_classes;
  graph::Graph g = graph::make_graph(n, num_classes, edges, feats, labels);
  g.train_mask = graph::full_mask(n);
  return g;
}

graph::Graph path_graph(int n, int d) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  Eigen::MatrixXd feats = Eigen::MatrixXd::Zero(n, d);
  for (int i = 0; i < n; ++i) feats(i, 0) = std::sin(i + 1.0);
  return graph::make_graph(n, 2, edges, feats, Eigen::VectorXi::Zero(n));
}

nets::ModelConfig small_config(nets::Backbone b, int feature_dim) {
  nets::ModelConfig cfg;
  cfg.encoder.backbone = b;
  cfg.encoder.hidden_dim = 8;
  cfg.encoder.output_dim = 8;
  cfg.encoder.gpr_steps = 4;
  cfg.encoder.sage_sample_cap = 64;  // no sampling on these small graphs
  cfg.mlp_hidden = 8;
  cfg.num_envs = 2;
  cfg.feature_dim = feature_dim;
  cfg.num_classes = 2;
  return cfg;
}

const nets::Backbone kAllBackbones[] = {nets::Backbone::kMeanAgg, nets::Backbone::kSampledNeighbor,
                                        nets::Backbone::kAttention, nets::Backbone::kGeneralizedPageRank};

}  // namespace

TEST_CASE("every encoder is permutation equivariant") {
  std::mt19937_64 rng(31);
  for (auto backbone : kAllBackbones) {
    nets::ModelConfig cfg = small_config(backbone, 5);
    auto params = nets::build_parameter_set(cfg, 7);
    for (int trial = 0; trial < 10; ++trial) {
      graph::Graph g = random_graph(rng, 30, 5, 0.15);
      std::vector<int> perm(30);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      graph::Graph pg = graph::permute_graph(g, perm);

      Eigen::MatrixXd h = nets::forward_phi(params, cfg, g, 5);
      Eigen::MatrixXd hp = nets::forward_phi(params, cfg, pg, 5);
      for (int i = 0; i < 30; ++i)
        CHECK((hp.row(perm[i]) - h.row(i)).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("encoder output row depends only on the receptive-field ego-graph") {
  for (auto backbone : kAllBackbones) {
    nets::ModelConfig cfg = small_config(backbone, 3);
    const int n = cfg.encoder.receptive_field() + 4;
    graph::Graph g = path_graph(n, 3);
    auto params = nets::build_parameter_set(cfg, 11);
    Eigen::MatrixXd before = nets::forward_phi(params, cfg, g, 3);

    // Toggle the far end of the path: outside node 0's receptive field.
    graph::Graph edited = g;
    edited.adjacency(n - 1, n - 2) = 0.0;
    edited.adjacency(n - 2, n - 1) = 0.0;
    Eigen::MatrixXd after = nets::forward_phi(params, cfg, edited, 3);
    CHECK((after.row(0) - before.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    // ... and inside node (n-1)'s.
    CHECK((after.row(n - 1) - before.row(n - 1)).cwiseAbs().maxCoeff() > 1e-8);
  }
}

TEST_CASE("encoder outputs stay in (-1,1) and zeroed output layers give zeros") {
  std::mt19937_64 rng(17);
  graph::Graph g = random_graph(rng, 25, 4, 0.2);
  nets::ModelConfig cfg = small_config(nets::Backbone::kMeanAgg, 4);
  auto params = nets::build_parameter_set(cfg, 3);
  Eigen::MatrixXd h = nets::forward_phi(params, cfg, g);
  CHECK(h.cwiseAbs().maxCoeff() < 1.0);
  CHECK(h.rows() == 25);
  CHECK(h.cols() == 8);

  // Zero final layer and zero features propagate to a zero output.
  params.group("phi").arrays[2].setZero();
  params.group("phi").arrays[3].setZero();
  graph::Graph zeros = g;
  zeros.features.setZero();
  CHECK(nets::forward_phi(params, cfg, zeros).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("environment weights live on the simplex") {
  std::mt19937_64 rng(23);
  graph::Graph g = random_graph(rng, 20, 4, 0.2);
  nets::ModelConfig cfg = small_config(nets::Backbone::kMeanAgg, 4);
  cfg.num_envs = 3;
  auto params = nets::build_parameter_set(cfg, 5);

  graph::EnvironmentAssignment rho = nets::forward_env_weights(params, cfg, g, 3);
  for (int i = 0; i < 20; ++i) {
    CHECK(rho.rho.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(rho.rho.row(i).minCoeff() >= 0.0);
    CHECK(rho.rho.row(i).maxCoeff() <= 1.0);
  }

  // Zero-initialized env classifier: exactly uniform rows.
  for (auto& a : params.group("w").arrays) a.setZero();
  rho = nets::forward_env_weights(params, cfg, g, 3);
  CHECK((rho.rho.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(nets::forward_env_weights(params, cfg, g, 1), ConfigError);
  CHECK_THROWS_AS(nets::forward_env_weights(params, cfg, g, 4), ConfigError);
}

TEST_CASE("identical ego-graphs get identical environment rows") {
  // Two disconnected identical components with identical features.
  const int half = 4;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i + 1 < half; ++i) {
    edges.emplace_back(i, i + 1);
    edges.emplace_back(half + i, half + i + 1);
  }
  Eigen::MatrixXd feats(2 * half, 3);
  for (int i = 0; i < half; ++i)
    for (int j = 0; j < 3; ++j) feats(i, j) = feats(half + i, j) = 0.3 * i + 0.1 * j;
  graph::Graph g = graph::make_graph(2 * half, 2, edges, feats, Eigen::VectorXi::Zero(2 * half));

  nets::ModelConfig cfg = small_config(nets::Backbone::kMeanAgg, 3);
  auto params = nets::build_parameter_set(cfg, 9);
  graph::EnvironmentAssignment rho = nets::forward_env_weights(params, cfg, g, 2);
  for (int i = 0; i < half; ++i)
    CHECK((rho.rho.row(i) - rho.rho.row(half + i)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("classifier and reconstructor meet their shape contracts deterministically") {
  std::mt19937_64 rng(29);
  nets::ModelConfig cfg = small_config(nets::Backbone::kMeanAgg, 6);
  auto params = nets::build_parameter_set(cfg, 13);
  Eigen::MatrixXd h(10, 8), he(10, 8);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 8; ++j) {
      h(i, j) = normal(rng);
      he(i, j) = normal(rng);
    }

  Eigen::MatrixXd scores = nets::forward_classifier(params, "c", h);
  CHECK(scores.rows() == 10);
  CHECK(scores.cols() == 2);
  CHECK(nets::forward_classifier(params, "c", h) == scores);  // purity

  Eigen::MatrixXd recon = nets::forward_reconstructor(params, he, h);
  CHECK(recon.rows() == 10);
  CHECK(recon.cols() == 6);

  Eigen::MatrixXd bad(10, 5);
  CHECK_THROWS_AS(nets::forward_classifier(params, "c", bad), ConfigError);
}

TEST_CASE("sampled-neighbor backbone is deterministic given its seed") {
  std::mt19937_64 rng(37);
  graph::Graph g = random_graph(rng, 40, 4, 0.5);  // dense enough to trigger sampling
  nets::ModelConfig cfg = small_config(nets::Backbone::kSampledNeighbor, 4);
  cfg.encoder.sage_sample_cap = 3;
  auto params = nets::build_parameter_set(cfg, 21);
  Eigen::MatrixXd a = nets::forward_phi(params, cfg, g, 123);
  Eigen::MatrixXd b = nets::forward_phi(params, cfg, g, 123);
  Eigen::MatrixXd c = nets::forward_phi(params, cfg, g, 124);
  CHECK(a == b);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("gradient_check passes for a cross-entropy loss through every backbone") {
  std::mt19937_64 rng(41);
  graph::Graph g = random_graph(rng, 20, 4, 0.25);
  for (auto backbone : kAllBackbones) {
    nets::ModelConfig cfg = small_config(backbone, 4);
    auto params = nets::build_parameter_set(cfg, 51);
    auto build = [&](nets::Binder& bind) {
      Var h = nets::encoder_forward(cfg.encoder, bind, "phi", Var::constant(g.adjacency),
                                    Var::constant(g.features), 7);
      Var scores = nets::mlp_forward(bind, "c", h);
      return ad::mean_all(ad::cross_entropy_rows(scores, g.labels));
    };
    auto result = nets::gradient_check(build, params, {"phi", "c"}, 200, 61);
    CAPTURE(nets::backbone_name(backbone));
    CHECK(result.max_rel_error < 1e-4);
    CHECK(result.num_checked > 0);
  }
}

TEST_CASE("gradient_check reports zero gradients for a constant loss") {
  nets::ModelConfig cfg = small_config(nets::Backbone::kMeanAgg, 4);
  auto params = nets::build_parameter_set(cfg, 71);
  auto build = [](nets::Binder&) { return Var::constant(3.5); };
  auto result = nets::gradient_check(build, params, {"phi"}, 50, 2);
  CHECK(result.max_rel_error < 1e-12);
}

TEST_CASE("checkpoints round-trip bitwise and report corruption") {
  nets::ModelConfig cfg = small_config(nets::Backbone::kAttention, 5);
  cfg.num_envs = 3;
  auto params = nets::build_parameter_set(cfg, 77);
  fs::path dir = fs::temp_directory_path() / "iene_ckpt_test";
  fs::remove_all(dir);
  nets::save_checkpoint(dir, params);
  nets::ParameterSet back = nets::load_checkpoint(dir);

  for (const auto& name : params.group_names()) {
    const auto& a = params.group(name).arrays;
    const auto& b = back.group(name).arrays;
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bitwise
  }
  CHECK_NOTHROW(nets::validate_parameter_shapes(back, cfg));

  // Wrong model config: shape error.
  nets::ModelConfig other = small_config(nets::Backbone::kAttention, 9);
  other.num_envs = 3;
  CHECK_THROWS_AS(nets::validate_parameter_shapes(back, other), ConfigError);

  // Missing group file names the group.
  fs::remove(dir / "phi.bin");
  try {
    nets::load_checkpoint(dir);
    FAIL("expected CorruptionError");
  } catch (const CorruptionError& e) {
    CHECK(std::string(e.what()).find("phi") != std::string::npos);
  }
  fs::remove_all(dir);
}

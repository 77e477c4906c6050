// SPDX-License-Identifier: Apache-2.0
#include "iene/graph/graph.hpp"

#include <doctest.h>

#include <deque>
#include <filesystem>
#include <random>
#include <set>

#include "iene/graph/io.hpp"
#include "iene/util/errors.hpp"

using namespace iene;
namespace fs = std::filesystem;

namespace {

graph::Graph path_graph(int n, int num_classes = 2) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  Eigen::MatrixXd feats = Eigen::MatrixXd::Zero(n, 3);
  for (int i = 0; i < n; ++i) feats(i, 0) = i;
  Eigen::VectorXi labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % num_classes;
  return graph::make_graph(n, num_classes, edges, feats, labels);
}

graph::Graph random_graph(std::mt19937_64& rng, int n, double p) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (coin(rng) < p) edges.emplace_back(i, j);
  Eigen::MatrixXd feats(n, 2);
  for (int i = 0; i < n; ++i) {
    feats(i, 0) = coin(rng);
    feats(i, 1) = coin(rng);
  }
  Eigen::VectorXi labels = Eigen::VectorXi::Zero(n);
  return graph::make_graph(n, 2, edges, feats, labels);
}

// Plain BFS oracle for the ego-graph node set.
std::set<int> bfs_oracle(const graph::Graph& g, int center, int hops) {
  std::set<int> seen{center};
  std::deque<std::pair<int, int>> queue{{center, 0}};
  while (!queue.empty()) {
    auto [u, d] = queue.front();
    queue.pop_front();
    if (d == hops) continue;
    for (int v = 0; v < g.num_nodes; ++v)
      if (g.adjacency(u, v) != 0.0 && !seen.count(v)) {
        seen.insert(v);
        queue.emplace_back(v, d + 1);
      }
  }
  return seen;
}

}  // namespace

TEST_CASE("validate_graph accepts a well-formed path graph") {
  CHECK(graph::validate_graph(path_graph(3)).empty());
}

TEST_CASE("validate_graph reports asymmetry") {
  graph::Graph g = path_graph(3);
  g.adjacency(0, 1) = 1.0;
  g.adjacency(1, 0) = 0.0;
  auto violations = graph::validate_graph(g);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0] == "asymmetric at (0,1)");
}

TEST_CASE("validate_graph reports self-loops") {
  graph::Graph g = path_graph(3);
  g.adjacency(0, 0) = 1.0;
  auto violations = graph::validate_graph(g);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0] == "nonzero diagonal at 0");
}

TEST_CASE("validate_graph reports non-binary entries, bad labels and mask overlap") {
  graph::Graph g = path_graph(4);
  g.adjacency(0, 1) = 0.5;
  g.adjacency(1, 0) = 0.5;
  g.labels[2] = 9;
  g.train_mask[3] = 1;
  g.val_mask[3] = 1;
  auto violations = graph::validate_graph(g);
  CHECK(violations.size() == 3);
}

TEST_CASE("normalized_adjacency handles the spec cases") {
  // Single node: self-loop only.
  graph::Graph single = graph::make_graph(1, 2, {}, Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXi::Zero(1));
  CHECK(graph::normalized_adjacency(single)(0, 0) == doctest::Approx(1.0));

  // Two nodes, one edge: D = diag(2,2), all entries 0.5.
  graph::Graph pair = path_graph(2);
  Eigen::MatrixXd s = graph::normalized_adjacency(pair);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(s(i, j) == doctest::Approx(0.5));

  // Empty 3-node graph: identity.
  graph::Graph empty = graph::make_graph(3, 2, {}, Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXi::Zero(3));
  CHECK(graph::normalized_adjacency(empty).isApprox(Eigen::MatrixXd::Identity(3, 3)));
}

TEST_CASE("normalized_adjacency is symmetric with spectral radius <= 1") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    graph::Graph g = random_graph(rng, 20, 0.2);
    Eigen::MatrixXd s = graph::normalized_adjacency(g);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    // Power iteration.
    Eigen::VectorXd v = Eigen::VectorXd::Ones(20).normalized();
    for (int it = 0; it < 200; ++it) v = (s * v).normalized();
    double radius = std::abs(v.dot(s * v));
    CHECK(radius <= 1.0 + 1e-9);
  }
}

TEST_CASE("extract_ego_graph matches the spec examples") {
  graph::Graph path = path_graph(3);
  CHECK(graph::extract_ego_graph(path, 0, 1).node_list == std::vector<int>{0, 1});
  CHECK(graph::extract_ego_graph(path, 0, 2).node_list == std::vector<int>{0, 1, 2});

  graph::Graph isolated = graph::make_graph(3, 2, {{1, 2}}, Eigen::MatrixXd::Zero(3, 1),
                                            Eigen::VectorXi::Zero(3));
  CHECK(graph::extract_ego_graph(isolated, 0, 5).node_list == std::vector<int>{0});

  CHECK_THROWS_AS(graph::extract_ego_graph(path, 7, 1), InputError);
  CHECK_THROWS_AS(graph::extract_ego_graph(path, 0, 0), InputError);
}

TEST_CASE("extract_ego_graph equals BFS truncated at depth L on random graphs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    graph::Graph g = random_graph(rng, 30, 0.08);
    std::uniform_int_distribution<int> pick(0, 29);
    int center = pick(rng);
    int hops = 1 + trial % 3;
    auto spec = graph::extract_ego_graph(g, center, hops);
    std::set<int> got(spec.node_list.begin(), spec.node_list.end());
    CHECK(got == bfs_oracle(g, center, hops));
    // Induced submatrix check on a few entries.
    for (std::size_t a = 0; a < spec.node_list.size(); ++a)
      for (std::size_t b = 0; b < spec.node_list.size(); ++b)
        CHECK(spec.local_adjacency(a, b) == g.adjacency(spec.node_list[a], spec.node_list[b]));
  }
}

TEST_CASE("graph serialization round-trips exactly") {
  std::mt19937_64 rng(9);
  graph::Graph g = random_graph(rng, 17, 0.2);
  g.env_id = 3;
  g.train_mask[0] = 1;
  g.val_mask[1] = 1;
  g.test_mask[2] = 1;

  fs::path dir = fs::temp_directory_path() / "iene_graph_io_test";
  fs::remove_all(dir);
  graph::write_graph(dir, g);
  graph::Graph back = graph::read_graph(dir);

  CHECK(back.num_nodes == g.num_nodes);
  CHECK(back.num_classes == g.num_classes);
  CHECK(back.adjacency == g.adjacency);
  CHECK(back.features == g.features);
  CHECK(back.labels == g.labels);
  CHECK(back.train_mask == g.train_mask);
  CHECK(back.val_mask == g.val_mask);
  CHECK(back.test_mask == g.test_mask);
  REQUIRE(back.env_id.has_value());
  CHECK(*back.env_id == 3);
  fs::remove_all(dir);
}

TEST_CASE("dataset serialization and hashing") {
  std::mt19937_64 rng(13);
  graph::MultiGraphDataset ds;
  ds.metric = graph::Metric::kAccuracy;
  ds.train_graphs = {random_graph(rng, 10, 0.3)};
  ds.val_graphs = {random_graph(rng, 10, 0.3)};
  ds.test_graphs = {random_graph(rng, 10, 0.3), random_graph(rng, 10, 0.3)};
  for (auto& g : ds.train_graphs) g.train_mask = graph::full_mask(10);

  fs::path dir = fs::temp_directory_path() / "iene_dataset_io_test";
  fs::remove_all(dir);
  graph::write_dataset(dir, ds);
  graph::MultiGraphDataset back = graph::read_dataset(dir);
  CHECK(back.train_graphs.size() == 1);
  CHECK(back.test_graphs.size() == 2);
  CHECK(back.train_graphs[0].adjacency == ds.train_graphs[0].adjacency);
  CHECK(graph::validate_dataset(back).empty());

  std::uint64_t h1 = graph::dataset_content_hash(dir);
  std::uint64_t h2 = graph::dataset_content_hash(dir);
  CHECK(h1 == h2);
  fs::remove_all(dir);
}

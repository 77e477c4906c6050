// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace iene::graph {

using Mask = std::vector<std::uint8_t>;

inline int mask_count(const Mask& m) {
  int n = 0;
  for (auto v : m) n += v ? 1 : 0;
  return n;
}

inline Mask full_mask(int n) { return Mask(static_cast<std::size_t>(n), 1); }
inline Mask empty_mask(int n) { return Mask(static_cast<std::size_t>(n), 0); }

/// One environment instance: dense undirected simple graph with node
/// features, labels and split masks. Values are immutable by convention;
/// transforms return new graphs.
struct Graph {
  int num_nodes = 0;
  int num_classes = 0;
  Eigen::MatrixXd adjacency;  // NxN, binary, symmetric, zero diagonal
  Eigen::MatrixXd features;   // Nxd
  Eigen::VectorXi labels;     // N, values in [0, num_classes)
  Mask train_mask, val_mask, test_mask;
  std::optional<int> env_id;

  int feature_dim() const { return static_cast<int>(features.cols()); }
  std::int64_t num_edges() const;  // undirected edge count
};

enum class Metric { kAccuracy, kRocAuc, kMacroF1 };

std::string metric_name(Metric m);
Metric metric_from_name(const std::string& name);

/// Ordered train/val/test graph collections sharing d and C.
struct MultiGraphDataset {
  std::vector<Graph> train_graphs, val_graphs, test_graphs;
  Metric metric = Metric::kAccuracy;

  int feature_dim() const { return train_graphs.empty() ? 0 : train_graphs.front().feature_dim(); }
  int num_classes() const { return train_graphs.empty() ? 0 : train_graphs.front().num_classes; }
};

/// Per-node soft environment weights; rows live on the K-simplex.
struct EnvironmentAssignment {
  Eigen::MatrixXd rho;  // NxK
  int num_envs() const { return static_cast<int>(rho.cols()); }
};

/// L-hop induced subgraph around a center node.
struct EgoGraphSpec {
  int center = 0;
  int hops = 1;
  std::vector<int> node_list;  // includes center
  Eigen::MatrixXd local_adjacency;
  Eigen::MatrixXd local_features;
};

/// Returns one human-readable entry per violated Graph invariant; empty when
/// the graph is valid.
std::vector<std::string> validate_graph(const Graph& g);

/// Violations of the dataset-level invariants (shared d/C, nonempty splits).
std::vector<std::string> validate_dataset(const MultiGraphDataset& ds);

/// Symmetric normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}.
Eigen::MatrixXd normalized_adjacency(const Graph& g);

/// BFS-truncated L-hop neighborhood of `center` with the induced submatrices.
EgoGraphSpec extract_ego_graph(const Graph& g, int center, int hops);

/// Builds a graph from an undirected edge list; symmetrizes and zeroes the
/// diagonal on ingestion.
Graph make_graph(int num_nodes, int num_classes, const std::vector<std::pair<int, int>>& edges,
                 Eigen::MatrixXd features, Eigen::VectorXi labels);

/// Relabels nodes: node i of the input becomes node perm[i] of the output.
Graph permute_graph(const Graph& g, const std::vector<int>& perm);

}  // namespace iene::graph

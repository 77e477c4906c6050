// SPDX-License-Identifier: Apache-2.0
#include "iene/graph/graph.hpp"

#include <deque>
#include <sstream>

#include "iene/util/errors.hpp"

namespace iene::graph {

std::int64_t Graph::num_edges() const {
  std::int64_t twice = 0;
  for (int i = 0; i < num_nodes; ++i)
    for (int j = 0; j < num_nodes; ++j) twice += adjacency(i, j) != 0.0 ? 1 : 0;
  return twice / 2;
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::kAccuracy: return "accuracy";
    case Metric::kRocAuc: return "rocauc";
    case Metric::kMacroF1: return "macro_f1";
  }
  return "accuracy";
}

Metric metric_from_name(const std::string& name) {
  if (name == "accuracy") return Metric::kAccuracy;
  if (name == "rocauc") return Metric::kRocAuc;
  if (name == "macro_f1") return Metric::kMacroF1;
  throw ConfigError("unknown metric: " + name);
}

std::vector<std::string> validate_graph(const Graph& g) {
  std::vector<std::string> out;
  std::ostringstream msg;
  auto emit = [&](auto&&... parts) {
    std::ostringstream s;
    (s << ... << parts);
    out.push_back(s.str());
  };

  const int n = g.num_nodes;
  if (n <= 0) {
    emit("num_nodes must be positive, got ", n);
    return out;
  }
  if (g.adjacency.rows() != n || g.adjacency.cols() != n)
    emit("adjacency shape ", g.adjacency.rows(), "x", g.adjacency.cols(), " does not match num_nodes ", n);
  if (g.features.rows() != n) emit("feature rows ", g.features.rows(), " do not match num_nodes ", n);
  if (g.labels.size() != n) emit("label count ", g.labels.size(), " does not match num_nodes ", n);

  if (g.adjacency.rows() == n && g.adjacency.cols() == n) {
    bool asym_reported = false, diag_reported = false, binary_reported = false;
    for (int i = 0; i < n && !(asym_reported && diag_reported && binary_reported); ++i) {
      if (!diag_reported && g.adjacency(i, i) != 0.0) {
        emit("nonzero diagonal at ", i);
        diag_reported = true;
      }
      for (int j = 0; j < n; ++j) {
        double a = g.adjacency(i, j);
        if (!binary_reported && a != 0.0 && a != 1.0) {
          emit("non-binary entry at (", i, ",", j, ")");
          binary_reported = true;
        }
        if (!asym_reported && j > i && a != g.adjacency(j, i)) {
          emit("asymmetric at (", i, ",", j, ")");
          asym_reported = true;
        }
      }
    }
  }

  if (g.labels.size() == n) {
    for (int i = 0; i < n; ++i) {
      if (g.labels[i] < 0 || g.labels[i] >= g.num_classes) {
        emit("label out of range at ", i, ": ", g.labels[i]);
        break;
      }
    }
  }

  auto mask_ok = [&](const Mask& m, const char* name) {
    if (static_cast<int>(m.size()) != n) {
      emit(name, " length ", m.size(), " does not match num_nodes ", n);
      return false;
    }
    return true;
  };
  bool sizes_ok = mask_ok(g.train_mask, "train_mask") & mask_ok(g.val_mask, "val_mask") &
                  mask_ok(g.test_mask, "test_mask");
  if (sizes_ok) {
    for (int i = 0; i < n; ++i) {
      int hits = (g.train_mask[i] ? 1 : 0) + (g.val_mask[i] ? 1 : 0) + (g.test_mask[i] ? 1 : 0);
      if (hits > 1) {
        emit("masks overlap at node ", i);
        break;
      }
    }
  }
  return out;
}

std::vector<std::string> validate_dataset(const MultiGraphDataset& ds) {
  std::vector<std::string> out;
  if (ds.train_graphs.empty()) out.push_back("no training graphs");
  if (ds.val_graphs.empty()) out.push_back("no validation graphs");
  if (ds.test_graphs.empty()) out.push_back("no test graphs");
  int d = -1, c = -1;
  auto check = [&](const Graph& g, const char* split, std::size_t idx) {
    if (d < 0) d = g.feature_dim();
    if (c < 0) c = g.num_classes;
    std::ostringstream s;
    if (g.feature_dim() != d) {
      s << split << " graph " << idx << " feature dim " << g.feature_dim() << " != " << d;
      out.push_back(s.str());
    } else if (g.num_classes != c) {
      s << split << " graph " << idx << " class count " << g.num_classes << " != " << c;
      out.push_back(s.str());
    }
  };
  for (std::size_t i = 0; i < ds.train_graphs.size(); ++i) check(ds.train_graphs[i], "train", i);
  for (std::size_t i = 0; i < ds.val_graphs.size(); ++i) check(ds.val_graphs[i], "val", i);
  for (std::size_t i = 0; i < ds.test_graphs.size(); ++i) check(ds.test_graphs[i], "test", i);
  return out;
}

Eigen::MatrixXd normalized_adjacency(const Graph& g) {
  Eigen::MatrixXd a = g.adjacency + Eigen::MatrixXd::Identity(g.num_nodes, g.num_nodes);
  Eigen::VectorXd dinv = a.rowwise().sum().array().rsqrt();
  return dinv.asDiagonal() * a * dinv.asDiagonal();
}

EgoGraphSpec extract_ego_graph(const Graph& g, int center, int hops) {
  if (center < 0 || center >= g.num_nodes)
    throw InputError("extract_ego_graph: center out of range");
  if (hops < 1) throw InputError("extract_ego_graph: hops must be >= 1");

  std::vector<int> depth(g.num_nodes, -1);
  std::deque<int> queue{center};
  depth[center] = 0;
  std::vector<int> nodes{center};
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    if (depth[u] == hops) continue;
    for (int v = 0; v < g.num_nodes; ++v) {
      if (g.adjacency(u, v) != 0.0 && depth[v] < 0) {
        depth[v] = depth[u] + 1;
        nodes.push_back(v);
        queue.push_back(v);
      }
    }
  }
  std::sort(nodes.begin(), nodes.end());

  EgoGraphSpec spec;
  spec.center = center;
  spec.hops = hops;
  spec.node_list = nodes;
  const int m = static_cast<int>(nodes.size());
  spec.local_adjacency.resize(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) spec.local_adjacency(i, j) = g.adjacency(nodes[i], nodes[j]);
  spec.local_features.resize(m, g.features.cols());
  for (int i = 0; i < m; ++i) spec.local_features.row(i) = g.features.row(nodes[i]);
  return spec;
}

Graph make_graph(int num_nodes, int num_classes, const std::vector<std::pair<int, int>>& edges,
                 Eigen::MatrixXd features, Eigen::VectorXi labels) {
  Graph g;
  g.num_nodes = num_nodes;
  g.num_classes = num_classes;
  g.adjacency = Eigen::MatrixXd::Zero(num_nodes, num_nodes);
  for (auto [i, j] : edges) {
    if (i < 0 || i >= num_nodes || j < 0 || j >= num_nodes)
      throw InputError("make_graph: edge endpoint out of range");
    if (i == j) continue;
    g.adjacency(i, j) = 1.0;
    g.adjacency(j, i) = 1.0;
  }
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.train_mask = empty_mask(num_nodes);
  g.val_mask = empty_mask(num_nodes);
  g.test_mask = empty_mask(num_nodes);
  return g;
}

Graph permute_graph(const Graph& g, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != g.num_nodes) throw InputError("permute_graph: bad permutation size");
  Graph out = g;
  for (int i = 0; i < g.num_nodes; ++i) {
    int pi = perm[i];
    out.features.row(pi) = g.features.row(i);
    out.labels[pi] = g.labels[i];
    out.train_mask[pi] = g.train_mask[i];
    out.val_mask[pi] = g.val_mask[i];
    out.test_mask[pi] = g.test_mask[i];
    for (int j = 0; j < g.num_nodes; ++j) out.adjacency(pi, perm[j]) = g.adjacency(i, j);
  }
  return out;
}

}  // namespace iene::graph

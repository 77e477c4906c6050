// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "iene/graph/graph.hpp"

namespace iene::graph {

// On-disk layout for one graph directory:
//   edges.tsv        tab-separated "i<TAB>j", each undirected edge once (i < j)
//   features.csv     one-line header x0,...,x{d-1}, then one row per node
//   labels.csv       header "label", one integer per node
//   train_mask.txt / val_mask.txt / test_mask.txt   0/1, one per line
//   manifest.json    num_nodes, feature_dim, num_classes, env_id
void write_graph(const std::filesystem::path& dir, const Graph& g);
Graph read_graph(const std::filesystem::path& dir);

// Dataset directory: manifest.json naming split subdirectories and the
// metric, plus train_i/, val_i/, test_i/ graph directories. Generators add a
// ground_truth.json sidecar next to the manifest; readers ignore it.
void write_dataset(const std::filesystem::path& dir, const MultiGraphDataset& ds);
MultiGraphDataset read_dataset(const std::filesystem::path& dir);

/// FNV-1a hash over the dataset manifest and per-graph content files; used to
/// refuse cross-dataset report comparisons.
std::uint64_t dataset_content_hash(const std::filesystem::path& dir);

}  // namespace iene::graph

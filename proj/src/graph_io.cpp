// SPDX-License-Identifier: Apache-2.0
#include "iene/graph/io.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "iene/util/errors.hpp"
#include "iene/util/rng.hpp"

namespace iene::graph {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorruptionError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& contents) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  out << contents;
}

void write_mask(const fs::path& p, const Mask& m) {
  std::ostringstream ss;
  for (auto v : m) ss << (v ? 1 : 0) << "\n";
  write_file(p, ss.str());
}

Mask read_mask(const fs::path& p, int n) {
  std::istringstream in(read_file(p));
  Mask m;
  m.reserve(n);
  int v;
  while (in >> v) m.push_back(v ? 1 : 0);
  if (static_cast<int>(m.size()) != n)
    throw CorruptionError("mask length mismatch in " + p.string());
  return m;
}

}  // namespace

void write_graph(const fs::path& dir, const Graph& g) {
  fs::create_directories(dir);

  std::ostringstream edges;
  for (int i = 0; i < g.num_nodes; ++i)
    for (int j = i + 1; j < g.num_nodes; ++j)
      if (g.adjacency(i, j) != 0.0) edges << i << "\t" << j << "\n";
  write_file(dir / "edges.tsv", edges.str());

  std::ostringstream feats;
  feats.precision(17);
  for (int j = 0; j < g.features.cols(); ++j) feats << (j ? "," : "") << "x" << j;
  feats << "\n";
  for (int i = 0; i < g.num_nodes; ++i) {
    for (int j = 0; j < g.features.cols(); ++j) feats << (j ? "," : "") << g.features(i, j);
    feats << "\n";
  }
  write_file(dir / "features.csv", feats.str());

  std::ostringstream labels;
  labels << "label\n";
  for (int i = 0; i < g.num_nodes; ++i) labels << g.labels[i] << "\n";
  write_file(dir / "labels.csv", labels.str());

  write_mask(dir / "train_mask.txt", g.train_mask);
  write_mask(dir / "val_mask.txt", g.val_mask);
  write_mask(dir / "test_mask.txt", g.test_mask);

  json manifest{{"num_nodes", g.num_nodes},
                {"feature_dim", g.feature_dim()},
                {"num_classes", g.num_classes}};
  if (g.env_id) manifest["env_id"] = *g.env_id;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Graph read_graph(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw CorruptionError("bad graph manifest in " + dir.string() + ": " + e.what());
  }
  Graph g;
  g.num_nodes = manifest.at("num_nodes").get<int>();
  g.num_classes = manifest.at("num_classes").get<int>();
  const int d = manifest.at("feature_dim").get<int>();
  if (manifest.contains("env_id")) g.env_id = manifest["env_id"].get<int>();

  g.adjacency = Eigen::MatrixXd::Zero(g.num_nodes, g.num_nodes);
  {
    std::istringstream in(read_file(dir / "edges.tsv"));
    int i, j;
    while (in >> i >> j) {
      if (i < 0 || i >= g.num_nodes || j < 0 || j >= g.num_nodes)
        throw CorruptionError("edge endpoint out of range in " + dir.string());
      if (i == j) continue;
      g.adjacency(i, j) = 1.0;
      g.adjacency(j, i) = 1.0;
    }
  }

  g.features.resize(g.num_nodes, d);
  {
    std::istringstream in(read_file(dir / "features.csv"));
    std::string line;
    std::getline(in, line);  // header
    for (int i = 0; i < g.num_nodes; ++i) {
      if (!std::getline(in, line)) throw CorruptionError("missing feature row in " + dir.string());
      std::istringstream row(line);
      std::string cell;
      for (int j = 0; j < d; ++j) {
        if (!std::getline(row, cell, ',')) throw CorruptionError("short feature row in " + dir.string());
        g.features(i, j) = std::stod(cell);
      }
    }
  }

  g.labels.resize(g.num_nodes);
  {
    std::istringstream in(read_file(dir / "labels.csv"));
    std::string line;
    std::getline(in, line);  // header
    for (int i = 0; i < g.num_nodes; ++i) {
      if (!std::getline(in, line)) throw CorruptionError("missing label row in " + dir.string());
      g.labels[i] = std::stoi(line);
    }
  }

  g.train_mask = read_mask(dir / "train_mask.txt", g.num_nodes);
  g.val_mask = read_mask(dir / "val_mask.txt", g.num_nodes);
  g.test_mask = read_mask(dir / "test_mask.txt", g.num_nodes);
  return g;
}

void write_dataset(const fs::path& dir, const MultiGraphDataset& ds) {
  fs::create_directories(dir);
  json manifest;
  manifest["metric"] = metric_name(ds.metric);
  manifest["num_train"] = ds.train_graphs.size();
  manifest["num_val"] = ds.val_graphs.size();
  manifest["num_test"] = ds.test_graphs.size();
  manifest["feature_dim"] = ds.feature_dim();
  manifest["num_classes"] = ds.num_classes();
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  for (std::size_t i = 0; i < ds.train_graphs.size(); ++i)
    write_graph(dir / ("train_" + std::to_string(i)), ds.train_graphs[i]);
  for (std::size_t i = 0; i < ds.val_graphs.size(); ++i)
    write_graph(dir / ("val_" + std::to_string(i)), ds.val_graphs[i]);
  for (std::size_t i = 0; i < ds.test_graphs.size(); ++i)
    write_graph(dir / ("test_" + std::to_string(i)), ds.test_graphs[i]);
}

MultiGraphDataset read_dataset(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw CorruptionError("bad dataset manifest in " + dir.string() + ": " + e.what());
  }
  MultiGraphDataset ds;
  ds.metric = metric_from_name(manifest.at("metric").get<std::string>());
  auto load = [&](const char* split, std::size_t count, std::vector<Graph>& out) {
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(read_graph(dir / (std::string(split) + "_" + std::to_string(i))));
  };
  load("train", manifest.at("num_train").get<std::size_t>(), ds.train_graphs);
  load("val", manifest.at("num_val").get<std::size_t>(), ds.val_graphs);
  load("test", manifest.at("num_test").get<std::size_t>(), ds.test_graphs);
  return ds;
}

std::uint64_t dataset_content_hash(const fs::path& dir) {
  std::uint64_t h = util::fnv1a(read_file(dir / "manifest.json"));
  json manifest = json::parse(read_file(dir / "manifest.json"));
  auto fold = [&](const char* split, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      fs::path gdir = dir / (std::string(split) + "_" + std::to_string(i));
      for (const char* name : {"edges.tsv", "features.csv", "labels.csv"})
        h = util::fnv1a(read_file(gdir / name), h);
    }
  };
  fold("train", manifest.at("num_train").get<std::size_t>());
  fold("val", manifest.at("num_val").get<std::size_t>());
  fold("test", manifest.at("num_test").get<std::size_t>());
  return h;
}

}  // namespace iene::graph

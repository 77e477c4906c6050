// SPDX-License-Identifier: Apache-2.0
#include "iene/evalkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iene/util/errors.hpp"

namespace iene::evalkit {

namespace {

std::vector<int> masked_indices(const graph::Mask& mask, Eigen::Index n) {
  std::vector<int> idx;
  for (Eigen::Index v = 0; v < n; ++v)
    if (mask.empty() || mask[v]) idx.push_back(static_cast<int>(v));
  if (idx.empty()) throw InputError("metric: empty node mask");
  return idx;
}

}  // namespace

double accuracy(const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels, const graph::Mask& mask) {
  auto idx = masked_indices(mask, scores.rows());
  int hits = 0;
  for (int v : idx) {
    Eigen::Index best;
    scores.row(v).maxCoeff(&best);
    hits += best == labels[v] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

double rocauc(const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels, const graph::Mask& mask) {
  auto idx = masked_indices(mask, scores.rows());
  std::vector<std::pair<double, int>> ranked;  // (score, label)
  int positives = 0, negatives = 0;
  for (int v : idx) {
    if (labels[v] != 0 && labels[v] != 1) throw InputError("rocauc: labels must be binary");
    double s = scores.cols() >= 2 ? scores(v, 1) - scores(v, 0) : scores(v, 0);
    ranked.emplace_back(s, labels[v]);
    (labels[v] == 1 ? positives : negatives) += 1;
  }
  if (positives == 0 || negatives == 0)
    throw InputError("rocauc: need at least one positive and one negative");
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Midranks over tie groups.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < ranked.size()) {
    std::size_t j = i;
    while (j + 1 < ranked.size() && ranked[j + 1].first == ranked[i].first) ++j;
    double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (ranked[k].second == 1) rank_sum_pos += midrank;
    i = j + 1;
  }
  double u = rank_sum_pos - static_cast<double>(positives) * (positives + 1.0) / 2.0;
  return u / (static_cast<double>(positives) * static_cast<double>(negatives));
}

double macro_f1(const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels, const graph::Mask& mask) {
  auto idx = masked_indices(mask, scores.rows());
  const int num_classes = static_cast<int>(scores.cols());
  std::vector<int> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (int v : idx) {
    Eigen::Index pred;
    scores.row(v).maxCoeff(&pred);
    if (pred == labels[v]) {
      ++tp[pred];
    } else {
      ++fp[pred];
      ++fn[labels[v]];
    }
  }
  double total = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    double prec = tp[c] + fp[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
    double rec = tp[c] + fn[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
    total += prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  return total / static_cast<double>(num_classes);
}

double metric_score(graph::Metric metric, const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels,
                    const graph::Mask& mask) {
  switch (metric) {
    case graph::Metric::kAccuracy: return accuracy(scores, labels, mask);
    case graph::Metric::kRocAuc: return rocauc(scores, labels, mask);
    case graph::Metric::kMacroF1: return macro_f1(scores, labels, mask);
  }
  throw ConfigError("unknown metric");
}

Eigen::MatrixXd predict_scores(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                               const graph::Graph& g, std::uint64_t sample_seed) {
  Eigen::MatrixXd h = nets::forward_phi(params, cfg, g, sample_seed);
  return nets::forward_classifier(params, "c", h);
}

double evaluate_split(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                      const graph::MultiGraphDataset& ds, Split split) {
  const std::vector<graph::Graph>* graphs = nullptr;
  switch (split) {
    case Split::kTrain: graphs = &ds.train_graphs; break;
    case Split::kVal: graphs = &ds.val_graphs; break;
    case Split::kTest: graphs = &ds.test_graphs; break;
  }
  if (graphs->empty()) throw InputError("evaluate_split: empty split");
  double total = 0.0;
  for (const graph::Graph& g : *graphs) {
    const graph::Mask& mask = split == Split::kTrain   ? g.train_mask
                              : split == Split::kVal   ? g.val_mask
                                                       : g.test_mask;
    total += metric_score(ds.metric, predict_scores(params, cfg, g), g.labels, mask);
  }
  return total / static_cast<double>(graphs->size());
}

MetricReport evaluate_multi_graph(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                                  const graph::MultiGraphDataset& ds) {
  MetricReport report;
  for (std::size_t i = 0; i < ds.test_graphs.size(); ++i) {
    const graph::Graph& g = ds.test_graphs[i];
    double score = metric_score(ds.metric, predict_scores(params, cfg, g), g.labels, g.test_mask);
    report.per_graph.emplace_back(static_cast<int>(i), score);
  }
  double sum = 0.0;
  for (auto& [idx, s] : report.per_graph) sum += s;
  report.mean = sum / static_cast<double>(report.per_graph.size());
  double var = 0.0;
  for (auto& [idx, s] : report.per_graph) var += (s - report.mean) * (s - report.mean);
  report.stddev = std::sqrt(var / static_cast<double>(report.per_graph.size()));
  return report;
}

}  // namespace iene::evalkit

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "iene/graph/graph.hpp"
#include "iene/nets/encoders.hpp"

namespace iene::evalkit {

/// Fraction of masked nodes whose argmax score matches the label.
double accuracy(const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels, const graph::Mask& mask);

/// Rank statistic (Mann-Whitney with midranks for ties) on binary labels.
/// Throws InputError unless the mask holds at least one positive and one
/// negative. Scores rank by column1 - column0 (or column 0 when C == 1).
double rocauc(const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels, const graph::Mask& mask);

/// Unweighted mean of per-class F1; a class with an undefined precision,
/// recall or F1 denominator contributes zero.
double macro_f1(const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels, const graph::Mask& mask);

double metric_score(graph::Metric metric, const Eigen::MatrixXd& scores, const Eigen::VectorXi& labels,
                    const graph::Mask& mask);

struct MetricReport {
  std::vector<std::pair<int, double>> per_graph;  // (graph index, score)
  double mean = 0.0;
  double stddev = 0.0;  // population
  int n_seeds = 1;
};

enum class Split { kTrain, kVal, kTest };

/// Classifier scores c(phi(G)) with no gradients.
Eigen::MatrixXd predict_scores(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                               const graph::Graph& g, std::uint64_t sample_seed = 0);

/// Mean metric over the graphs of one split, each on its own split mask.
double evaluate_split(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                      const graph::MultiGraphDataset& ds, Split split);

/// Per-test-graph metric scores plus their mean and population std.
MetricReport evaluate_multi_graph(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                                  const graph::MultiGraphDataset& ds);

}  // namespace iene::evalkit

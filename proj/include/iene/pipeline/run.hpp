// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>

#include "iene/extrapolate/intervention.hpp"
#include "iene/graph/graph.hpp"
#include "iene/nets/encoders.hpp"
#include "iene/objectives/losses.hpp"
#include "iene/partition/stage_one.hpp"

namespace iene::pipeline {

enum class Method { kErm, kVRex, kIeneR, kIeneE, kIeneRe };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct StageTwoConfig {
  int training_iters = 200;
  int intervention_iters = 30;  // relaxed-mask steps per view refresh
  double beta = 1.0;
  double budget_frac = 0.05;  // flipped pairs per view, as a fraction of |E|
  int refresh_every = 10;     // outer iterations between view re-optimizations
  int num_sample = 3;         // sampled non-edge candidates per node
  double theta_lr = 0.5;
  objectives::PenaltyKind penalty = objectives::PenaltyKind::kNvRex;
  extrapolate::ViewMethod view_method = extrapolate::ViewMethod::kLearned;
};

struct RunConfig {
  Method method = Method::kErm;
  nets::EncoderConfig encoder;
  int mlp_hidden = 32;
  partition::StageOneConfig stage_one;
  StageTwoConfig stage_two;
  int patience = 20;
  std::uint64_t seed = 0;
  std::string stage_one_checkpoint;  // required by iene_e
  bool check_frozen = false;         // test mode: verify frozen groups bitwise
};

struct RunResult {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<std::pair<int, double>> per_test_graph;
  double test_mean = 0.0;
  double test_std = 0.0;
  double train_metric = 0.0;
  double val_metric = 0.0;  // of the selected checkpoint
  double final_val_metric = 0.0;
  double wall_clock_sec = 0.0;
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_hash = 0;
  std::vector<partition::TraceRecord> trace;
};

/// Trains per the configured method, selects the best-validation checkpoint,
/// and scores every test graph. `out_params` (optional) receives the selected
/// parameters. Non-finite losses abort with DivergenceError.
RunResult run(const RunConfig& rc, const graph::MultiGraphDataset& ds, std::uint64_t dataset_hash = 0,
              nets::ParameterSet* out_params = nullptr);

nlohmann::json run_config_to_json(const RunConfig& rc);
RunConfig run_config_from_json(const nlohmann::json& j);
std::uint64_t config_hash(const RunConfig& rc);

/// runresult.json plus trace.ndjson (one {step,name,value} record per line),
/// written atomically (write to temp, rename).
void save_run_result(const std::filesystem::path& dir, const RunResult& result);
RunResult load_run_result(const std::filesystem::path& dir);

}  // namespace iene::pipeline

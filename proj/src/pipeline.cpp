// SPDX-License-Identifier: Apache-2.0
#include "iene/pipeline/run.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "iene/evalkit/metrics.hpp"
#include "iene/nets/checkpoint.hpp"
#include "iene/util/errors.hpp"
#include "iene/util/log.hpp"
#include "iene/util/rng.hpp"

namespace iene::pipeline {

using ad::Var;
using nlohmann::json;

std::string method_name(Method m) {
  switch (m) {
    case Method::kErm: return "erm";
    case Method::kVRex: return "vrex";
    case Method::kIeneR: return "iene_r";
    case Method::kIeneE: return "iene_e";
    case Method::kIeneRe: return "iene_re";
  }
  return "erm";
}

Method method_from_name(const std::string& name) {
  if (name == "erm") return Method::kErm;
  if (name == "vrex") return Method::kVRex;
  if (name == "iene_r") return Method::kIeneR;
  if (name == "iene_e") return Method::kIeneE;
  if (name == "iene_re") return Method::kIeneRe;
  throw ConfigError("unknown method: " + name);
}

namespace {

std::uint64_t group_bytes_hash(const nets::ParamGroup& g) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& a : g.arrays) {
    std::string_view bytes(reinterpret_cast<const char*>(a.data()), sizeof(double) * a.size());
    h = util::fnv1a(bytes, h);
  }
  return h;
}

// Tracks the best-validation checkpoint and the early-stop counter.
struct Selection {
  double best_val = -std::numeric_limits<double>::infinity();
  nets::ParameterSet best;
  int since_best = 0;

  bool observe(double val, const nets::ParameterSet& params) {
    if (val > best_val) {
      best_val = val;
      best = params;
      since_best = 0;
      return true;
    }
    ++since_best;
    return false;
  }
};

struct FrozenGuard {
  std::vector<std::pair<std::string, std::uint64_t>> hashes;

  FrozenGuard(const nets::ParameterSet& params, const std::set<std::string>& trainable, bool enabled) {
    if (!enabled) return;
    for (const auto& name : params.group_names())
      if (!trainable.count(name)) hashes.emplace_back(name, group_bytes_hash(params.group(name)));
  }
  void verify(const nets::ParameterSet& params) const {
    for (const auto& [name, h] : hashes)
      if (group_bytes_hash(params.group(name)) != h)
        throw std::logic_error("frozen parameter group changed during step: " + name);
  }
};

void check_finite(double value, const char* what) {
  if (!std::isfinite(value))
    throw DivergenceError(std::string("non-finite ") + what + " during training");
}

// One (phi, c) minimization step for the erm and vrex baselines.
double baseline_step(nets::ParameterSet& params, const nets::ModelConfig& model,
                     const graph::MultiGraphDataset& ds, Method method, double beta,
                     std::optional<std::uint64_t> sample_seed, bool check_frozen) {
  nets::Binder bind(params, {"phi", "c"});
  FrozenGuard guard(params, {"phi", "c"}, check_frozen);
  Var loss;
  if (method == Method::kErm) {
    Var total = Var::constant(0.0);
    for (const auto& g : ds.train_graphs) {
      Var h = nets::encoder_forward(model.encoder, bind, "phi", Var::constant(g.adjacency),
                                    Var::constant(g.features), sample_seed);
      Var ce = ad::cross_entropy_rows(nets::mlp_forward(bind, "c", h), g.labels);
      total = ad::add(total, objectives::masked_mean(ce, g.train_mask));
    }
    loss = ad::scale(total, 1.0 / static_cast<double>(ds.train_graphs.size()));
  } else {
    // Graph-level V-REx over the given training graphs as environments.
    if (ds.train_graphs.size() < 2)
      throw ConfigError("vrex baseline needs at least 2 training graphs");
    Var risks;
    for (std::size_t gi = 0; gi < ds.train_graphs.size(); ++gi) {
      const auto& g = ds.train_graphs[gi];
      Var h = nets::encoder_forward(model.encoder, bind, "phi", Var::constant(g.adjacency),
                                    Var::constant(g.features), sample_seed);
      Var ce = ad::cross_entropy_rows(nets::mlp_forward(bind, "c", h), g.labels);
      Var risk = objectives::masked_mean(ce, g.train_mask);
      risks = gi == 0 ? risk : ad::concat_cols(risks, risk);
    }
    Var mean_risk = ad::mean_all(risks);
    loss = ad::add(mean_risk, ad::scale(objectives::vrex(risks, {}), beta));
  }
  loss.backward();
  params.group("phi").apply_gradients(bind.grads("phi"));
  params.group("c").apply_gradients(bind.grads("c"));
  guard.verify(params);
  return loss.scalar();
}

}  // namespace

RunResult run(const RunConfig& rc, const graph::MultiGraphDataset& ds, std::uint64_t dataset_hash,
              nets::ParameterSet* out_params) {
  auto t0 = std::chrono::steady_clock::now();
  {
    auto violations = graph::validate_dataset(ds);
    if (!violations.empty()) throw InputError("invalid dataset: " + violations.front());
  }
  if (rc.patience < 1) throw ConfigError("patience must be >= 1");

  nets::ModelConfig model = partition::make_model_config(ds, rc.encoder, rc.stage_one, rc.mlp_hidden);
  const bool sage = model.encoder.backbone == nets::Backbone::kSampledNeighbor;

  RunResult result;
  result.method = method_name(rc.method);
  result.seed = rc.seed;
  result.config_hash = config_hash(rc);
  result.dataset_hash = dataset_hash;

  int trace_step = 0;
  auto record = [&](const std::string& name, double value) {
    result.trace.push_back({trace_step++, name, value});
    check_finite(value, name.c_str());
  };

  Selection selection;
  nets::ParameterSet params;

  auto eval_and_track = [&](nets::ParameterSet& p) {
    double val = evalkit::evaluate_split(p, model, ds, evalkit::Split::kVal);
    record("val_metric", val);
    selection.observe(val, p);
    return val;
  };

  // --- Phase A: baseline training or stage one -------------------------------
  if (rc.method == Method::kErm || rc.method == Method::kVRex) {
    params = nets::build_parameter_set(model, util::derive_seed(rc.seed, "baseline-init"),
                                       {rc.stage_one.lr_heads, rc.stage_one.lr_phi, rc.stage_one.lr_env_model, rc.stage_one.lr_router, rc.stage_one.lr_env_classifiers});
    for (int it = 0; it < rc.stage_two.training_iters; ++it) {
      std::optional<std::uint64_t> sample_seed =
          sage ? std::optional<std::uint64_t>(util::derive_seed(rc.seed, "sample", it)) : std::nullopt;
      double loss = baseline_step(params, model, ds, rc.method, rc.stage_two.beta, sample_seed,
                                  rc.check_frozen);
      record(rc.method == Method::kErm ? "erm" : "vrex_objective", loss);
      eval_and_track(params);
      if (selection.since_best >= rc.patience) break;
    }
  } else if (rc.method == Method::kIeneE) {
    if (rc.stage_one_checkpoint.empty())
      throw ConfigError("iene_e requires a stage-one checkpoint (stage_one_checkpoint)");
    params = nets::load_checkpoint(rc.stage_one_checkpoint);
    nets::validate_parameter_shapes(params, model);
  } else {
    partition::StageOneConfig sc = rc.stage_one;
    sc.seed = rc.seed;
    auto observer = [&](int, nets::ParameterSet& p) { eval_and_track(p); };
    partition::StageOneResult stage_one = partition::stage_one_train(ds, model, sc, observer);
    for (auto& t : stage_one.trace) result.trace.push_back({trace_step++, t.name, t.value});
    params = std::move(stage_one.params);
  }

  // --- Phase B: stage two (invariant learning over extrapolated views) ------
  if (rc.method == Method::kIeneE || rc.method == Method::kIeneRe) {
    const int num_views = rc.stage_one.K;
    std::vector<std::vector<graph::Graph>> views(ds.train_graphs.size());
    for (int it = 0; it < rc.stage_two.training_iters; ++it) {
      std::optional<std::uint64_t> sample_seed =
          sage ? std::optional<std::uint64_t>(util::derive_seed(rc.seed, "sample-s2", it))
               : std::nullopt;
      if (it % rc.stage_two.refresh_every == 0) {
        for (std::size_t gi = 0; gi < ds.train_graphs.size(); ++gi) {
          const graph::Graph& g = ds.train_graphs[gi];
          extrapolate::ViewConfig vc;
          vc.steps = rc.stage_two.intervention_iters;
          vc.budget = std::max<int>(1, static_cast<int>(std::llround(
                                           rc.stage_two.budget_frac *
                                           static_cast<double>(g.num_edges()))));
          vc.lr = rc.stage_two.theta_lr;
          vc.num_sample = rc.stage_two.num_sample;
          vc.method = rc.stage_two.view_method;
          auto vr = extrapolate::optimize_views(
              g, params, model, num_views, vc,
              util::derive_seed(rc.seed, "views", static_cast<std::uint64_t>(it) * 1000 + gi));
          views[gi] = std::move(vr.views);
          if (!vr.final_loss.empty()) {
            double mean_final = 0.0;
            for (double f : vr.final_loss) mean_final += f;
            record("extrapolation_loss", mean_final / static_cast<double>(vr.final_loss.size()));
          }
        }
      }

      nets::Binder bind(params, {"phi", "c"});
      FrozenGuard guard(params, {"phi", "c"}, rc.check_frozen);
      Var total = Var::constant(0.0);
      for (std::size_t gi = 0; gi < ds.train_graphs.size(); ++gi) {
        const graph::Graph& g = ds.train_graphs[gi];
        Var piece =
            rc.method == Method::kIeneRe
                ? objectives::combined_objective(bind, model, g, views[gi], rc.stage_one.lambda,
                                                 rc.stage_two.beta, rc.stage_two.penalty, sample_seed)
                : objectives::dynamic_objective(bind, model, views[gi], g.labels, g.train_mask,
                                                rc.stage_two.beta, rc.stage_two.penalty, sample_seed);
        total = ad::add(total, piece);
      }
      Var loss = ad::scale(total, 1.0 / static_cast<double>(ds.train_graphs.size()));
      loss.backward();
      params.group("phi").apply_gradients(bind.grads("phi"));
      params.group("c").apply_gradients(bind.grads("c"));
      guard.verify(params);
      record(rc.method == Method::kIeneRe ? "L_combined" : "L_d", loss.scalar());
      eval_and_track(params);
      if (selection.since_best >= rc.patience) break;
    }
  }

  // --- Selection and final evaluation ----------------------------------------
  result.final_val_metric = evalkit::evaluate_split(params, model, ds, evalkit::Split::kVal);
  nets::ParameterSet selected = selection.best_val > -std::numeric_limits<double>::infinity()
                                    ? std::move(selection.best)
                                    : std::move(params);
  result.val_metric = evalkit::evaluate_split(selected, model, ds, evalkit::Split::kVal);
  result.train_metric = evalkit::evaluate_split(selected, model, ds, evalkit::Split::kTrain);
  evalkit::MetricReport report = evalkit::evaluate_multi_graph(selected, model, ds);
  result.per_test_graph = report.per_graph;
  result.test_mean = report.mean;
  result.test_std = report.stddev;
  if (out_params != nullptr) *out_params = std::move(selected);

  result.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---------------------------------------------------------------------------
// Config and result (de)serialization

json run_config_to_json(const RunConfig& rc) {
  json j;
  j["method"] = method_name(rc.method);
  j["encoder"] = {{"backbone", nets::backbone_name(rc.encoder.backbone)},
                  {"layers", rc.encoder.layers},
                  {"hidden_dim", rc.encoder.hidden_dim},
                  {"output_dim", rc.encoder.output_dim},
                  {"gpr_steps", rc.encoder.gpr_steps},
                  {"sage_sample_cap", rc.encoder.sage_sample_cap}};
  j["mlp_hidden"] = rc.mlp_hidden;
  j["stage_one"] = {{"annealing_iters", rc.stage_one.annealing_iters},
                    {"disentangle_iters", rc.stage_one.disentangle_iters},
                    {"K", rc.stage_one.K},
                    {"lambda", rc.stage_one.lambda},
                    {"eta", rc.stage_one.eta},
                    {"lr_heads", rc.stage_one.lr_heads},
                    {"lr_phi", rc.stage_one.lr_phi},
                    {"lr_env_model", rc.stage_one.lr_env_model},
                    {"lr_router", rc.stage_one.lr_router},
                    {"lr_env_classifiers", rc.stage_one.lr_env_classifiers},
                    {"adversary_rounds", rc.stage_one.adversary_rounds},
                    {"anneal_frac", rc.stage_one.anneal_frac},
                    {"aux", rc.stage_one.aux == partition::AuxSource::kLearned      ? "learned"
                            : rc.stage_one.aux == partition::AuxSource::kNoise      ? "noise"
                                                                                    : "feature_block"},
                    {"aux_block_begin", rc.stage_one.aux_block_begin},
                    {"aux_block_end", rc.stage_one.aux_block_end}};
  j["stage_two"] = {{"training_iters", rc.stage_two.training_iters},
                    {"intervention_iters", rc.stage_two.intervention_iters},
                    {"beta", rc.stage_two.beta},
                    {"budget_frac", rc.stage_two.budget_frac},
                    {"refresh_every", rc.stage_two.refresh_every},
                    {"num_sample", rc.stage_two.num_sample},
                    {"theta_lr", rc.stage_two.theta_lr},
                    {"penalty", rc.stage_two.penalty == objectives::PenaltyKind::kNvRex ? "nvrex"
                                                                                        : "vrex"},
                    {"view_method",
                     rc.stage_two.view_method == extrapolate::ViewMethod::kLearned      ? "learned"
                     : rc.stage_two.view_method == extrapolate::ViewMethod::kRandomFlip ? "random_flip"
                                                                                        : "grad_flip"}};
  j["patience"] = rc.patience;
  j["seed"] = rc.seed;
  j["stage_one_checkpoint"] = rc.stage_one_checkpoint;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig rc;
  rc.method = method_from_name(j.at("method").get<std::string>());
  const json& e = j.at("encoder");
  rc.encoder.backbone = nets::backbone_from_name(e.at("backbone").get<std::string>());
  rc.encoder.layers = e.value("layers", rc.encoder.layers);
  rc.encoder.hidden_dim = e.value("hidden_dim", rc.encoder.hidden_dim);
  rc.encoder.output_dim = e.value("output_dim", rc.encoder.output_dim);
  rc.encoder.gpr_steps = e.value("gpr_steps", rc.encoder.gpr_steps);
  rc.encoder.sage_sample_cap = e.value("sage_sample_cap", rc.encoder.sage_sample_cap);
  rc.mlp_hidden = j.value("mlp_hidden", rc.mlp_hidden);
  const json& s1 = j.at("stage_one");
  rc.stage_one.annealing_iters = s1.value("annealing_iters", rc.stage_one.annealing_iters);
  rc.stage_one.disentangle_iters = s1.value("disentangle_iters", rc.stage_one.disentangle_iters);
  rc.stage_one.K = s1.value("K", rc.stage_one.K);
  rc.stage_one.lambda = s1.value("lambda", rc.stage_one.lambda);
  rc.stage_one.eta = s1.value("eta", rc.stage_one.eta);
  rc.stage_one.lr_heads = s1.value("lr_heads", rc.stage_one.lr_heads);
  rc.stage_one.lr_phi = s1.value("lr_phi", rc.stage_one.lr_phi);
  rc.stage_one.lr_env_model = s1.value("lr_env_model", rc.stage_one.lr_env_model);
  rc.stage_one.lr_router = s1.value("lr_router", rc.stage_one.lr_router);
  rc.stage_one.lr_env_classifiers = s1.value("lr_env_classifiers", rc.stage_one.lr_env_classifiers);
  rc.stage_one.adversary_rounds = s1.value("adversary_rounds", rc.stage_one.adversary_rounds);
  rc.stage_one.anneal_frac = s1.value("anneal_frac", rc.stage_one.anneal_frac);
  std::string aux = s1.value("aux", std::string("learned"));
  rc.stage_one.aux = aux == "learned" ? partition::AuxSource::kLearned
                     : aux == "noise" ? partition::AuxSource::kNoise
                                      : partition::AuxSource::kFeatureBlock;
  rc.stage_one.aux_block_begin = s1.value("aux_block_begin", 0);
  rc.stage_one.aux_block_end = s1.value("aux_block_end", 0);
  const json& s2 = j.at("stage_two");
  rc.stage_two.training_iters = s2.value("training_iters", rc.stage_two.training_iters);
  rc.stage_two.intervention_iters = s2.value("intervention_iters", rc.stage_two.intervention_iters);
  rc.stage_two.beta = s2.value("beta", rc.stage_two.beta);
  rc.stage_two.budget_frac = s2.value("budget_frac", rc.stage_two.budget_frac);
  rc.stage_two.refresh_every = s2.value("refresh_every", rc.stage_two.refresh_every);
  rc.stage_two.num_sample = s2.value("num_sample", rc.stage_two.num_sample);
  rc.stage_two.theta_lr = s2.value("theta_lr", rc.stage_two.theta_lr);
  rc.stage_two.penalty = s2.value("penalty", std::string("nvrex")) == "vrex"
                             ? objectives::PenaltyKind::kVRex
                             : objectives::PenaltyKind::kNvRex;
  std::string vm = s2.value("view_method", std::string("learned"));
  rc.stage_two.view_method = vm == "random_flip" ? extrapolate::ViewMethod::kRandomFlip
                             : vm == "grad_flip" ? extrapolate::ViewMethod::kGradFlip
                                                 : extrapolate::ViewMethod::kLearned;
  rc.patience = j.value("patience", rc.patience);
  rc.seed = j.value("seed", static_cast<std::uint64_t>(0));
  rc.stage_one_checkpoint = j.value("stage_one_checkpoint", std::string());
  return rc;
}

std::uint64_t config_hash(const RunConfig& rc) { return util::fnv1a(run_config_to_json(rc).dump()); }

void save_run_result(const std::filesystem::path& dir, const RunResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json j;
  j["method"] = result.method;
  j["seed"] = result.seed;
  j["test_mean"] = result.test_mean;
  j["test_std"] = result.test_std;
  j["train_metric"] = result.train_metric;
  j["val_metric"] = result.val_metric;
  j["final_val_metric"] = result.final_val_metric;
  j["wall_clock_sec"] = result.wall_clock_sec;
  j["config_hash"] = result.config_hash;
  j["dataset_hash"] = result.dataset_hash;
  json per = json::array();
  for (auto& [idx, score] : result.per_test_graph) per.push_back({{"graph", idx}, {"score", score}});
  j["per_test_graph"] = per;

  fs::path tmp = dir / "runresult.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw InputError("cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, dir / "runresult.json");

  fs::path trace_tmp = dir / "trace.ndjson.tmp";
  {
    std::ofstream out(trace_tmp);
    if (!out) throw InputError("cannot write " + trace_tmp.string());
    for (const auto& t : result.trace)
      out << json{{"step", t.step}, {"name", t.name}, {"value", t.value}}.dump() << "\n";
  }
  fs::rename(trace_tmp, dir / "trace.ndjson");
}

RunResult load_run_result(const std::filesystem::path& dir) {
  std::ifstream in(dir / "runresult.json");
  if (!in) throw CorruptionError("missing runresult.json in " + dir.string());
  json j = json::parse(in);
  RunResult result;
  result.method = j.at("method").get<std::string>();
  result.seed = j.at("seed").get<std::uint64_t>();
  result.test_mean = j.at("test_mean").get<double>();
  result.test_std = j.at("test_std").get<double>();
  result.train_metric = j.at("train_metric").get<double>();
  result.val_metric = j.at("val_metric").get<double>();
  result.final_val_metric = j.value("final_val_metric", 0.0);
  result.wall_clock_sec = j.at("wall_clock_sec").get<double>();
  result.config_hash = j.at("config_hash").get<std::uint64_t>();
  result.dataset_hash = j.at("dataset_hash").get<std::uint64_t>();
  for (const auto& p : j.at("per_test_graph"))
    result.per_test_graph.emplace_back(p.at("graph").get<int>(), p.at("score").get<double>());
  return result;
}

}  // namespace iene::pipeline

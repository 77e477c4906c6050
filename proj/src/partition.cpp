// SPDX-License-Identifier: Apache-2.0
#include "iene/partition/stage_one.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iene/objectives/losses.hpp"
#include "iene/util/errors.hpp"
#include "iene/util/log.hpp"
#include "iene/util/rng.hpp"

namespace iene::partition {

using ad::Matrix;
using ad::Var;

nets::ModelConfig make_model_config(const graph::MultiGraphDataset& ds, nets::EncoderConfig encoder,
                                    const StageOneConfig& sc, int mlp_hidden) {
  nets::ModelConfig cfg;
  cfg.encoder = encoder;
  cfg.mlp_hidden = mlp_hidden;
  cfg.num_envs = sc.K;
  cfg.feature_dim = ds.feature_dim();
  cfg.num_classes = ds.num_classes();
  if (sc.aux == AuxSource::kFeatureBlock) {
    if (sc.aux_block_begin < 0 || sc.aux_block_end <= sc.aux_block_begin ||
        sc.aux_block_end > cfg.feature_dim)
      throw ConfigError("stage one: invalid auxiliary feature block range");
    cfg.env_feature_dim = sc.aux_block_end - sc.aux_block_begin;
  }
  return cfg;
}

namespace {

Eigen::MatrixXd mask_weights_indicator(const graph::Mask& mask, int n) {
  Eigen::MatrixXd ind = Eigen::MatrixXd::Zero(n, 1);
  for (int v = 0; v < n; ++v)
    if (mask.empty() || mask[v]) ind(v, 0) = 1.0;
  return ind;
}

struct GraphContext {
  const graph::Graph* g = nullptr;
  Matrix aux;  // fixed auxiliary input when aux != kLearned
};

// rho for one graph under the configured auxiliary source.
Var rho_forward(nets::Binder& bind, const nets::ModelConfig& cfg, const StageOneConfig& sc,
                const GraphContext& ctx, std::optional<std::uint64_t> sample_seed) {
  if (sc.aux == AuxSource::kLearned)
    return objectives::environment_weights(bind, cfg, Var::constant(ctx.g->adjacency),
                                           Var::constant(ctx.g->features), sample_seed);
  return ad::row_softmax(nets::mlp_forward(bind, "w", Var::constant(ctx.aux)));
}

struct LsTerms {
  Var objective;  // erm + lambda * P_inv
  double erm = 0.0;
  double penalty = 0.0;
};

LsTerms partition_loss(nets::Binder& bind, const nets::ModelConfig& cfg, const StageOneConfig& sc,
                       const std::vector<GraphContext>& ctxs, double lambda,
                       std::optional<std::uint64_t> sample_seed) {
  Var total = Var::constant(0.0);
  double erm_acc = 0.0, pen_acc = 0.0;
  for (const GraphContext& ctx : ctxs) {
    const graph::Graph& g = *ctx.g;
    Var h = nets::encoder_forward(cfg.encoder, bind, "phi", Var::constant(g.adjacency),
                                  Var::constant(g.features), sample_seed);
    Var shared_loss = ad::cross_entropy_rows(nets::mlp_forward(bind, "c", h), g.labels);
    Var risk = objectives::masked_mean(shared_loss, g.train_mask);
    Var rho = rho_forward(bind, cfg, sc, ctx, sample_seed);
    std::vector<Var> env_losses;
    for (int k = 1; k <= sc.K; ++k)
      env_losses.push_back(
          ad::cross_entropy_rows(nets::mlp_forward(bind, "c_" + std::to_string(k), h), g.labels));
    Var penalty = objectives::invariance_penalty(shared_loss, env_losses, rho, g.train_mask);
    total = ad::add(total, objectives::partition_objective(risk, penalty, lambda));
    erm_acc += risk.scalar();
    pen_acc += penalty.scalar();
  }
  double inv_graphs = 1.0 / static_cast<double>(ctxs.size());
  return LsTerms{ad::scale(total, inv_graphs), erm_acc * inv_graphs, pen_acc * inv_graphs};
}

void ensure_finite(double value, const char* what, const std::vector<TraceRecord>& trace) {
  if (std::isfinite(value)) return;
  std::string tail;
  for (std::size_t i = trace.size() > 5 ? trace.size() - 5 : 0; i < trace.size(); ++i)
    tail += trace[i].name + "=" + std::to_string(trace[i].value) + " ";
  throw DivergenceError(std::string("non-finite ") + what + " in stage one; recent trace: " + tail);
}

// Ignition targets for the router: within each label class, nodes are split
// into K quantile bins of the shared classifier's loss. A model leaning on
// the dominant spurious mapping fits one environment's nodes systematically
// better than another's, so the within-class loss ordering carries the
// environment signal while staying label-independent by construction.
std::vector<Eigen::VectorXi> ignition_targets(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                                              const StageOneConfig& sc,
                                              const std::vector<GraphContext>& ctxs,
                                              std::optional<std::uint64_t> sample_seed) {
  std::vector<Eigen::VectorXi> targets;
  for (const GraphContext& ctx : ctxs) {
    const graph::Graph& g = *ctx.g;
    nets::Binder frozen(params, {});
    Var h = nets::encoder_forward(cfg.encoder, frozen, "phi", Var::constant(g.adjacency),
                                  Var::constant(g.features), sample_seed);
    Eigen::VectorXd shared =
        ad::cross_entropy_rows(nets::mlp_forward(frozen, "c", h), g.labels).value().col(0);
    Eigen::VectorXi t = Eigen::VectorXi::Zero(g.num_nodes);
    for (int y = 0; y < g.num_classes; ++y) {
      std::vector<std::pair<double, int>> members;
      for (int v = 0; v < g.num_nodes; ++v) {
        if (!g.train_mask.empty() && !g.train_mask[v]) continue;
        if (g.labels[v] == y) members.emplace_back(shared[v], v);
      }
      std::sort(members.begin(), members.end());
      for (std::size_t r = 0; r < members.size(); ++r)
        t[members[r].second] = static_cast<int>(r * sc.K / members.size());
    }
    targets.push_back(std::move(t));
  }
  return targets;
}

// Supervised router steps toward the given per-node environment targets.
void fit_router(nets::ParameterSet& params, const nets::ModelConfig& cfg, const StageOneConfig& sc,
                const std::vector<GraphContext>& ctxs, const std::vector<Eigen::VectorXi>& targets,
                int steps, std::optional<std::uint64_t> sample_seed) {
  for (int fit = 0; fit < steps; ++fit) {
    nets::Binder rbind(params, {"w"});
    Var fit_loss = Var::constant(0.0);
    for (std::size_t gi = 0; gi < ctxs.size(); ++gi) {
      Var logits =
          sc.aux == AuxSource::kLearned
              ? nets::mlp_forward(rbind, "w",
                                  nets::encoder_forward(cfg.encoder, rbind, "u",
                                                        Var::constant(ctxs[gi].g->adjacency),
                                                        Var::constant(ctxs[gi].g->features),
                                                        sample_seed))
              : nets::mlp_forward(rbind, "w", Var::constant(ctxs[gi].aux));
      fit_loss = ad::add(fit_loss, objectives::masked_mean(ad::cross_entropy_rows(logits, targets[gi]),
                                                           ctxs[gi].g->train_mask));
    }
    fit_loss = ad::scale(fit_loss, 1.0 / static_cast<double>(ctxs.size()));
    fit_loss.backward();
    params.group("w").apply_gradients(rbind.grads("w"));
  }
}

// Counterfactual partition quality: the weighted-risk gap between a shared
// ridge fit on phi features and per-environment weighted ridge fits (the
// closed-form best responses). Collapsed or uninformative partitions score
// zero; partitions aligned with genuine P(y|phi) heterogeneity score high.
// Used only to select which iterate's partition to report.
double partition_heterogeneity(nets::ParameterSet& params, const nets::ModelConfig& cfg,
                               const StageOneConfig& sc, const std::vector<GraphContext>& ctxs,
                               std::optional<std::uint64_t> sample_seed) {
  constexpr double kRidge = 1e-3;
  // Stack every training graph: environments typically split whole graphs, so
  // the gap is only visible on the pooled node set.
  int total_nodes = 0, width = 0, classes = 0;
  for (const GraphContext& ctx : ctxs) total_nodes += ctx.g->num_nodes;
  std::vector<Eigen::MatrixXd> phis;
  for (const GraphContext& ctx : ctxs) {
    nets::Binder bind(params, {});
    phis.push_back(nets::encoder_forward(cfg.encoder, bind, "phi", Var::constant(ctx.g->adjacency),
                                         Var::constant(ctx.g->features), sample_seed)
                       .value());
  }
  width = static_cast<int>(phis.front().cols()) + 1;
  classes = ctxs.front().g->num_classes;

  Eigen::MatrixXd z(total_nodes, width);
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(total_nodes, classes);
  Eigen::MatrixXd rho(total_nodes, sc.K);
  Eigen::VectorXd masked(total_nodes);
  int at = 0;
  for (std::size_t gi = 0; gi < ctxs.size(); ++gi) {
    const graph::Graph& g = *ctxs[gi].g;
    nets::Binder bind(params, {});
    z.block(at, 0, g.num_nodes, width - 1) = phis[gi];
    z.col(width - 1).segment(at, g.num_nodes).setOnes();
    for (int v = 0; v < g.num_nodes; ++v) targets(at + v, g.labels[v]) = 1.0;
    rho.middleRows(at, g.num_nodes) = rho_forward(bind, cfg, sc, ctxs[gi], sample_seed).value();
    masked.segment(at, g.num_nodes) = mask_weights_indicator(g.train_mask, g.num_nodes).col(0);
    at += g.num_nodes;
  }

  auto weighted_fit = [&](const Eigen::VectorXd& wts) {
    Eigen::MatrixXd zw = z.array().colwise() * wts.array();
    Eigen::MatrixXd gram = zw.transpose() * z;
    gram.diagonal().array() += kRidge;
    return Eigen::MatrixXd(gram.ldlt().solve(zw.transpose() * targets));
  };
  auto weighted_mse = [&](const Eigen::MatrixXd& fit, const Eigen::VectorXd& wts) {
    Eigen::MatrixXd resid = z * fit - targets;
    return (resid.array().square().rowwise().sum() * wts.array()).sum() /
           static_cast<double>(total_nodes);
  };

  Eigen::MatrixXd shared = weighted_fit(masked);
  double total = 0.0;
  for (int k = 0; k < sc.K; ++k) {
    Eigen::VectorXd wts = rho.col(k).cwiseProduct(masked);
    if (wts.sum() < 1e-6) continue;
    total += weighted_mse(shared, wts) - weighted_mse(weighted_fit(wts), wts);
  }
  return total;
}

}  // namespace

StageOneResult stage_one_train(const graph::MultiGraphDataset& ds, const nets::ModelConfig& cfg,
                               const StageOneConfig& sc, const AnnealObserver& observer) {
  if (ds.train_graphs.empty()) throw InputError("stage one: dataset has no training graphs");
  if (sc.K < 2) throw ConfigError("stage one: K must be >= 2");
  if (sc.annealing_iters < 1 || sc.disentangle_iters < 1)
    throw ConfigError("stage one: iteration counts must be >= 1");
  if (cfg.num_envs != sc.K) throw ConfigError("stage one: model num_envs must equal K");

  StageOneResult result;
  result.params = nets::build_parameter_set(cfg, util::derive_seed(sc.seed, "stage-one-init"),
                                            {sc.lr_heads, sc.lr_phi, sc.lr_env_model, sc.lr_router, sc.lr_env_classifiers});
  nets::ParameterSet& params = result.params;

  std::vector<GraphContext> ctxs;
  for (const auto& g : ds.train_graphs) {
    GraphContext ctx;
    ctx.g = &g;
    if (sc.aux == AuxSource::kNoise) {
      util::Rng rng = util::make_rng(util::derive_seed(sc.seed, "aux-noise", ctxs.size()));
      std::normal_distribution<double> normal(0.0, 1.0);
      ctx.aux.resize(g.num_nodes, cfg.env_input_dim());
      for (int i = 0; i < g.num_nodes; ++i)
        for (int j = 0; j < cfg.env_input_dim(); ++j) ctx.aux(i, j) = normal(rng);
    } else if (sc.aux == AuxSource::kFeatureBlock) {
      ctx.aux = g.features.middleCols(sc.aux_block_begin, sc.aux_block_end - sc.aux_block_begin);
    }
    ctxs.push_back(std::move(ctx));
  }

  const bool sage = cfg.encoder.backbone == nets::Backbone::kSampledNeighbor;
  int trace_step = 0;
  auto record = [&](const std::string& name, double value) {
    result.trace.push_back({trace_step++, name, value});
    ensure_finite(value, name.c_str(), result.trace);
  };

  const double ramp_steps = std::max(1.0, sc.anneal_frac * sc.annealing_iters);
  double best_penalty = -std::numeric_limits<double>::infinity();
  nets::ParameterSet best_params;
  bool has_best = false;

  std::vector<int> restart_iters;
  if (sc.router_restarts > 0) {
    int lo = static_cast<int>(ramp_steps);
    int span = std::max(1, sc.annealing_iters - lo);
    for (int r = 1; r <= sc.router_restarts; ++r)
      restart_iters.push_back(lo + r * span / (sc.router_restarts + 1));
  }

  for (int iter = 0; iter < sc.annealing_iters; ++iter) {
    double lambda = sc.lambda * std::min(1.0, static_cast<double>(iter) / ramp_steps);
    std::optional<std::uint64_t> sample_seed =
        sage ? std::optional<std::uint64_t>(util::derive_seed(sc.seed, "sage-sample", iter))
             : std::nullopt;

    bool ignite = iter == static_cast<int>(ramp_steps);
    if (std::find(restart_iters.begin(), restart_iters.end(), iter) != restart_iters.end()) {
      nets::ParameterSet fresh = nets::build_parameter_set(
          cfg, util::derive_seed(sc.seed, "router-restart", iter),
          {sc.lr_heads, sc.lr_phi, sc.lr_env_model, sc.lr_router, sc.lr_env_classifiers});
      params.group("w").arrays = fresh.group("w").arrays;
      params.group("w").reset_optimizer_state();
      for (int k = 1; k <= sc.K; ++k) {
        std::string name = "c_" + std::to_string(k);
        params.group(name).arrays = fresh.group(name).arrays;
        params.group(name).reset_optimizer_state();
      }
      ignite = true;
    }
    if (ignite && sc.router_fit_steps > 0) {
      // Seed each adversary segment: fit w to the within-class loss-quantile
      // split of the shared classifier, then burst-fit the environment
      // classifiers on those clusters so the segment starts self-consistent.
      std::vector<Eigen::VectorXi> targets = ignition_targets(params, cfg, sc, ctxs, sample_seed);
      fit_router(params, cfg, sc, ctxs, targets, 20 * sc.router_fit_steps, sample_seed);
      for (int burst = 0; burst < 30; ++burst) {
        std::set<std::string> trainable;
        for (int k = 1; k <= sc.K; ++k) trainable.insert("c_" + std::to_string(k));
        nets::Binder bind(params, trainable);
        Var loss = Var::constant(0.0);
        for (std::size_t gi = 0; gi < ctxs.size(); ++gi) {
          const graph::Graph& g = *ctxs[gi].g;
          Var h = nets::encoder_forward(cfg.encoder, bind, "phi", Var::constant(g.adjacency),
                                        Var::constant(g.features), sample_seed);
          Eigen::MatrixXd hard = Eigen::MatrixXd::Zero(g.num_nodes, sc.K);
          for (int v = 0; v < g.num_nodes; ++v) hard(v, targets[gi][v]) = 1.0;
          Eigen::MatrixXd masked = mask_weights_indicator(g.train_mask, g.num_nodes);
          for (int k = 1; k <= sc.K; ++k) {
            double mass = hard.col(k - 1).dot(masked.col(0));
            if (mass < 1.0) continue;
            Var ce = ad::cross_entropy_rows(nets::mlp_forward(bind, "c_" + std::to_string(k), h),
                                            g.labels);
            loss = ad::add(loss, ad::scale(objectives::weighted_env_risk(ce, Var::constant(hard),
                                                                         k - 1, g.train_mask),
                                           masked.col(0).sum() / mass));
          }
        }
        loss = ad::scale(loss, 1.0 / static_cast<double>(ctxs.size()));
        loss.backward();
        for (const std::string& name : trainable)
          params.group(name).apply_gradients(bind.grads(name));
      }
    }

    // (i) Disentangle: u and d minimize reconstruction + eta * HSIC, phi fixed.
    if (sc.aux == AuxSource::kLearned) {
      for (int j = 0; j < sc.disentangle_iters; ++j) {
        nets::Binder bind(params, {"u", "d"});
        Var loss = Var::constant(0.0);
        for (const GraphContext& ctx : ctxs)
          loss = ad::add(loss, objectives::disentangle_loss(bind, cfg, *ctx.g, sc.eta, sample_seed));
        loss = ad::scale(loss, 1.0 / static_cast<double>(ctxs.size()));
        loss.backward();
        params.group("u").apply_gradients(bind.grads("u"));
        params.group("d").apply_gradients(bind.grads("d"));
        record("disentangle", loss.scalar());
      }
    }

    for (int round = 0; round < sc.adversary_rounds; ++round) {
      // (ii) Fit c_1..c_K on their rho-weighted risks, phi fixed.
      std::set<std::string> trainable;
      for (int k = 1; k <= sc.K; ++k) trainable.insert("c_" + std::to_string(k));
      nets::Binder bind(params, trainable);
      Var loss = Var::constant(0.0);
      for (const GraphContext& ctx : ctxs) {
        const graph::Graph& g = *ctx.g;
        Var h = nets::encoder_forward(cfg.encoder, bind, "phi", Var::constant(g.adjacency),
                                      Var::constant(g.features), sample_seed);
        Var rho = rho_forward(bind, cfg, sc, ctx, sample_seed);
        Eigen::MatrixXd responsibilities = rho.value();
        if (sc.harden_env_classifier_fit) {
          // Classification-EM style: each c_k trains on the nodes currently
          // routed to it, which keeps the specialists crisp under soft rho.
          Eigen::MatrixXd hard = Eigen::MatrixXd::Zero(responsibilities.rows(), sc.K);
          for (Eigen::Index v = 0; v < responsibilities.rows(); ++v) {
            Eigen::Index best_k;
            responsibilities.row(v).maxCoeff(&best_k);
            hard(v, best_k) = 1.0;
          }
          responsibilities = hard;
        }
        Eigen::MatrixXd masked = mask_weights_indicator(g.train_mask, g.num_nodes);
        for (int k = 1; k <= sc.K; ++k) {
          Var ce = ad::cross_entropy_rows(nets::mlp_forward(bind, "c_" + std::to_string(k), h),
                                          g.labels);
          Var risk = objectives::weighted_env_risk(ce, Var::constant(responsibilities), k - 1,
                                                   g.train_mask);
          if (sc.normalize_env_classifier_fit) {
            double mass = responsibilities.col(k - 1).dot(masked.col(0));
            double count = masked.col(0).sum();
            if (mass / count < 1e-6) continue;  // skip near-empty clusters
            risk = ad::scale(risk, count / mass);
          }
          loss = ad::add(loss, risk);
        }
      }
      loss = ad::scale(loss, 1.0 / static_cast<double>(ctxs.size()));
      loss.backward();
      for (const std::string& name : trainable)
        params.group(name).apply_gradients(bind.grads(name));
      if (round == 0) record("env_classifiers", loss.scalar());

      // (iv) Maximize L_s over w with everything else fixed. The ascent
      // direction uses class-centered loss gaps: a partition may not encode
      // label information beyond the invariant features (the invariance
      // condition), and the raw gradient otherwise collapses onto the
      // degenerate label partition.
      nets::Binder wbind(params, {"w"});
      Var centered = Var::constant(0.0);
      double true_ls = 0.0;
      for (const GraphContext& ctx : ctxs) {
        const graph::Graph& g = *ctx.g;
        nets::Binder frozen(params, {});
        Var h = nets::encoder_forward(cfg.encoder, frozen, "phi", Var::constant(g.adjacency),
                                      Var::constant(g.features), sample_seed);
        Eigen::VectorXd shared = ad::cross_entropy_rows(nets::mlp_forward(frozen, "c", h), g.labels)
                                     .value()
                                     .col(0);
        Eigen::MatrixXd gaps(g.num_nodes, sc.K);
        for (int k = 1; k <= sc.K; ++k)
          gaps.col(k - 1) =
              shared - ad::cross_entropy_rows(nets::mlp_forward(frozen, "c_" + std::to_string(k), h),
                                              g.labels)
                           .value()
                           .col(0);
        Eigen::MatrixXd class_mean = Eigen::MatrixXd::Zero(g.num_classes, sc.K);
        Eigen::VectorXd class_count = Eigen::VectorXd::Zero(g.num_classes);
        for (int v = 0; v < g.num_nodes; ++v) {
          if (!g.train_mask.empty() && !g.train_mask[v]) continue;
          class_mean.row(g.labels[v]) += gaps.row(v);
          class_count[g.labels[v]] += 1.0;
        }
        for (int y = 0; y < g.num_classes; ++y)
          if (class_count[y] > 0) class_mean.row(y) /= class_count[y];
        Eigen::MatrixXd centered_gaps = gaps;
        for (int v = 0; v < g.num_nodes; ++v) centered_gaps.row(v) -= class_mean.row(g.labels[v]);
        Eigen::MatrixXd weights = mask_weights_indicator(g.train_mask, g.num_nodes);
        double n_masked = weights.sum();
        Var rho = rho_forward(wbind, cfg, sc, ctx, sample_seed);
        Var graph_term = ad::sum_all(ad::cwise_mul(
            rho, Var::constant(Eigen::MatrixXd(centered_gaps.array().colwise() * weights.col(0).array() /
                                                n_masked))));
        centered = ad::add(centered, ad::scale(graph_term, lambda));
        for (int k = 0; k < sc.K; ++k)
          true_ls += (gaps.col(k).cwiseProduct(weights.col(0)) / n_masked)
                         .dot(rho.value().col(k)) * lambda;
      }
      centered = ad::scale(centered, 1.0 / static_cast<double>(ctxs.size()));
      centered.backward();
      params.group("w").apply_gradients(wbind.grads("w"), /*maximize=*/true);
      if (round == sc.adversary_rounds - 1)
        record("L_s_max", true_ls / static_cast<double>(ctxs.size()));

      if (sc.router_fit_steps > 0) {
        // Best-response targets from the current env classifier losses. The
        // loss gaps are centered within each label class before the argmin:
        // a partition must not carry label information beyond the invariant
        // features (the invariance condition), and uncentered gaps collapse
        // onto the degenerate label partition.
        std::vector<Eigen::VectorXi> targets;
        for (const GraphContext& ctx : ctxs) {
          const graph::Graph& g = *ctx.g;
          nets::Binder frozen(params, {});
          Var h = nets::encoder_forward(cfg.encoder, frozen, "phi", Var::constant(g.adjacency),
                                        Var::constant(g.features), sample_seed);
          Eigen::MatrixXd env_loss(g.num_nodes, sc.K);
          for (int k = 1; k <= sc.K; ++k)
            env_loss.col(k - 1) = ad::cross_entropy_rows(
                                      nets::mlp_forward(frozen, "c_" + std::to_string(k), h), g.labels)
                                      .value()
                                      .col(0);
          Eigen::MatrixXd class_mean = Eigen::MatrixXd::Zero(g.num_classes, sc.K);
          Eigen::VectorXd class_count = Eigen::VectorXd::Zero(g.num_classes);
          for (int v = 0; v < g.num_nodes; ++v) {
            if (!g.train_mask.empty() && !g.train_mask[v]) continue;
            class_mean.row(g.labels[v]) += env_loss.row(v);
            class_count[g.labels[v]] += 1.0;
          }
          for (int y = 0; y < g.num_classes; ++y)
            if (class_count[y] > 0) class_mean.row(y) /= class_count[y];
          Eigen::VectorXi t(g.num_nodes);
          for (int v = 0; v < g.num_nodes; ++v) {
            Eigen::Index best_k;
            (env_loss.row(v) - class_mean.row(g.labels[v])).minCoeff(&best_k);
            t[v] = static_cast<int>(best_k);
          }
          targets.push_back(std::move(t));
        }
        fit_router(params, cfg, sc, ctxs, targets, sc.router_fit_steps, sample_seed);
      }
    }

    // (iii) Minimize L_s over (phi, c) with u, w, c_k fixed.
    {
      nets::Binder bind(params, {"phi", "c"});
      LsTerms terms = partition_loss(bind, cfg, sc, ctxs, lambda, sample_seed);
      terms.objective.backward();
      params.group("phi").apply_gradients(bind.grads("phi"));
      params.group("c").apply_gradients(bind.grads("c"));
      record("L_s_min", terms.objective.scalar());
      record("erm", terms.erm);
      record("P_inv", terms.penalty);
    }

    // The adversarial value oscillates once phi starts discarding spurious
    // content, so the reported partition is the iterate whose rho admits the
    // largest closed-form best-response penalty gap (Appendix-style weighted
    // least squares on the current phi features). Degenerate assignments
    // score zero, so every iterate can compete.
    {
      double score = partition_heterogeneity(params, cfg, sc, ctxs, sample_seed);
      record("partition_score", score);
      if (score > best_penalty) {
        best_penalty = score;
        best_params = params;
        has_best = true;
      }
    }

    if (observer) observer(iter, params);
  }

  nets::ParameterSet& partition_params = has_best ? best_params : params;
  for (std::size_t gi = 0; gi < ctxs.size(); ++gi) {
    nets::Binder best_bind(partition_params, {});
    Var rho = rho_forward(best_bind, cfg, sc, ctxs[gi],
                          sage ? std::optional<std::uint64_t>(util::derive_seed(sc.seed, "sage-final"))
                               : std::nullopt);
    result.rho_train.push_back(graph::EnvironmentAssignment{rho.value()});
  }
  // The environment-defining groups come from the best-penalty snapshot; the
  // prediction path (phi, c) keeps its final minimization state.
  if (has_best) {
    for (const char* group : {"u", "w", "d"})
      result.params.group(group).arrays = partition_params.group(group).arrays;
    for (int k = 1; k <= sc.K; ++k) {
      std::string name = "c_" + std::to_string(k);
      result.params.group(name).arrays = partition_params.group(name).arrays;
    }
  }
  return result;
}

PartitionReport env_partition_report(const Eigen::MatrixXd& rho, const std::vector<int>& true_env) {
  if (rho.rows() != static_cast<Eigen::Index>(true_env.size()))
    throw InputError("env_partition_report: row mismatch");
  const int k = static_cast<int>(rho.cols());
  if (k > 6) throw InputError("env_partition_report: brute-force matching supports K <= 6");
  const int n = static_cast<int>(rho.rows());

  std::vector<int> pred(n);
  for (int v = 0; v < n; ++v) {
    Eigen::Index best;
    rho.row(v).maxCoeff(&best);
    pred[v] = static_cast<int>(best);
  }

  PartitionReport report;
  report.env_sizes.assign(k, 0);
  for (int v = 0; v < n; ++v) ++report.env_sizes[pred[v]];
  for (int e = 0; e < k; ++e)
    if (report.env_sizes[e] == 0) report.empty_envs.push_back(e);

  // Remap ground-truth labels to 0..T-1.
  std::vector<int> truth_ids(true_env.begin(), true_env.end());
  std::vector<int> uniq = truth_ids;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  const int t = static_cast<int>(uniq.size());
  for (int& v : truth_ids)
    v = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), v) - uniq.begin());

  // Confusion counts, then brute force over injective true->inferred maps.
  std::vector<std::vector<int>> counts(k, std::vector<int>(t, 0));
  for (int v = 0; v < n; ++v) ++counts[pred[v]][truth_ids[v]];

  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  int best = 0;
  do {
    int hits = 0;
    for (int true_id = 0; true_id < std::min(t, k); ++true_id) hits += counts[perm[true_id]][true_id];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  report.agreement = static_cast<double>(best) / static_cast<double>(n);
  return report;
}

}  // namespace iene::partition

// SPDX-License-Identifier: Apache-2.0
#include "iene/nets/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "iene/nets/gradcheck.hpp"
#include "iene/util/errors.hpp"
#include "iene/util/rng.hpp"

namespace iene::nets {

using ad::Matrix;
using ad::Var;

// ---------------------------------------------------------------------------
// Parameter groups and optimizers

void ParamGroup::reset_optimizer_state() {
  moment1.clear();
  moment2.clear();
  step_count = 0;
}

void ParamGroup::apply_gradients(const std::vector<Eigen::MatrixXd>& grads, bool maximize) {
  if (grads.size() != arrays.size()) throw InputError("apply_gradients: gradient count mismatch");
  double sign = maximize ? -1.0 : 1.0;
  if (optim.kind == OptimKind::kSgd) {
    for (std::size_t i = 0; i < arrays.size(); ++i) arrays[i] -= optim.lr * sign * grads[i];
    return;
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (moment1.size() != arrays.size()) {
    moment1.clear();
    moment2.clear();
    for (const auto& a : arrays) {
      moment1.push_back(Eigen::MatrixXd::Zero(a.rows(), a.cols()));
      moment2.push_back(Eigen::MatrixXd::Zero(a.rows(), a.cols()));
    }
  }
  ++step_count;
  double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_count));
  double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    Eigen::MatrixXd g = sign * grads[i];
    moment1[i] = kBeta1 * moment1[i] + (1.0 - kBeta1) * g;
    moment2[i] = kBeta2 * moment2[i].array().matrix() + (1.0 - kBeta2) * g.cwiseProduct(g);
    Eigen::ArrayXXd mhat = moment1[i].array() / bc1;
    Eigen::ArrayXXd vhat = moment2[i].array() / bc2;
    arrays[i].array() -= optim.lr * mhat / (vhat.sqrt() + kEps);
  }
}

ParamGroup& ParameterSet::add_group(const std::string& name, OptimSpec optim) {
  if (has_group(name)) throw ConfigError("duplicate parameter group: " + name);
  ParamGroup g;
  g.name = name;
  g.optim = optim;
  groups_.push_back(std::move(g));
  return groups_.back();
}

ParamGroup& ParameterSet::group(const std::string& name) {
  for (auto& g : groups_)
    if (g.name == name) return g;
  throw ConfigError("unknown parameter group: " + name);
}

const ParamGroup& ParameterSet::group(const std::string& name) const {
  for (const auto& g : groups_)
    if (g.name == name) return g;
  throw ConfigError("unknown parameter group: " + name);
}

bool ParameterSet::has_group(const std::string& name) const {
  for (const auto& g : groups_)
    if (g.name == name) return true;
  return false;
}

std::vector<std::string> ParameterSet::group_names() const {
  std::vector<std::string> names;
  names.reserve(groups_.size());
  for (const auto& g : groups_) names.push_back(g.name);
  return names;
}

Var Binder::operator()(const std::string& group, std::size_t index) {
  auto key = std::make_pair(group, index);
  auto it = bound_.find(key);
  if (it != bound_.end()) return it->second;
  const Eigen::MatrixXd& array = params_.group(group).arrays.at(index);
  Var v = trainable_.count(group) ? Var::leaf(array) : Var::constant(array);
  bound_.emplace(key, v);
  return v;
}

std::vector<Eigen::MatrixXd> Binder::grads(const std::string& group) const {
  const ParamGroup& g = params_.group(group);
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t i = 0; i < g.arrays.size(); ++i) {
    auto it = bound_.find(std::make_pair(group, i));
    if (it != bound_.end() && it->second.grad().size() > 0) {
      out.push_back(it->second.grad());
    } else {
      out.push_back(Eigen::MatrixXd::Zero(g.arrays[i].rows(), g.arrays[i].cols()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Construction

std::string backbone_name(Backbone b) {
  switch (b) {
    case Backbone::kMeanAgg: return "gcn";
    case Backbone::kSampledNeighbor: return "sage";
    case Backbone::kAttention: return "gat";
    case Backbone::kGeneralizedPageRank: return "gpr";
  }
  return "gcn";
}

Backbone backbone_from_name(const std::string& name) {
  if (name == "gcn") return Backbone::kMeanAgg;
  if (name == "sage") return Backbone::kSampledNeighbor;
  if (name == "gat") return Backbone::kAttention;
  if (name == "gpr") return Backbone::kGeneralizedPageRank;
  throw ConfigError("unknown backbone: " + name);
}

namespace {

Matrix uniform_init(util::Rng& rng, int rows, int cols, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

struct LayerShape {
  int in = 0, out = 0;
};

std::vector<LayerShape> encoder_layer_shapes(const EncoderConfig& cfg, int feature_dim) {
  if (cfg.layers < 1 || cfg.hidden_dim < 1) throw ConfigError("encoder needs layers >= 1, hidden_dim >= 1");
  std::vector<LayerShape> shapes;
  for (int l = 0; l < cfg.layers; ++l) {
    LayerShape s;
    s.in = l == 0 ? feature_dim : cfg.hidden_dim;
    s.out = l == cfg.layers - 1 ? cfg.output_dim : cfg.hidden_dim;
    shapes.push_back(s);
  }
  return shapes;
}

void init_encoder_group(ParamGroup& g, const EncoderConfig& cfg, int feature_dim, util::Rng& rng) {
  auto shapes = encoder_layer_shapes(cfg, feature_dim);
  const double kLastScale = 0.1;  // keeps early rho near uniform
  if (cfg.backbone == Backbone::kGeneralizedPageRank) {
    // Two dense layers feeding the propagation, then learnable step weights.
    double s0 = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    g.arrays.push_back(uniform_init(rng, feature_dim, cfg.hidden_dim, s0));
    g.arrays.push_back(Matrix::Zero(1, cfg.hidden_dim));
    double s1 = kLastScale / std::sqrt(static_cast<double>(cfg.hidden_dim));
    g.arrays.push_back(uniform_init(rng, cfg.hidden_dim, cfg.output_dim, s1));
    g.arrays.push_back(Matrix::Zero(1, cfg.output_dim));
    Matrix gamma(cfg.gpr_steps + 1, 1);
    for (int t = 0; t <= cfg.gpr_steps; ++t) gamma(t, 0) = std::pow(0.9, t);
    g.arrays.push_back(gamma);
    return;
  }
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    double scale = 1.0 / std::sqrt(static_cast<double>(shapes[l].in));
    if (l + 1 == shapes.size()) scale *= kLastScale;
    switch (cfg.backbone) {
      case Backbone::kMeanAgg:
        g.arrays.push_back(uniform_init(rng, shapes[l].in, shapes[l].out, scale));
        g.arrays.push_back(Matrix::Zero(1, shapes[l].out));
        break;
      case Backbone::kSampledNeighbor:
        g.arrays.push_back(uniform_init(rng, shapes[l].in, shapes[l].out, scale));
        g.arrays.push_back(uniform_init(rng, shapes[l].in, shapes[l].out, scale));
        g.arrays.push_back(Matrix::Zero(1, shapes[l].out));
        break;
      case Backbone::kAttention: {
        g.arrays.push_back(uniform_init(rng, shapes[l].in, shapes[l].out, scale));
        double ascale = 1.0 / std::sqrt(static_cast<double>(shapes[l].out));
        g.arrays.push_back(uniform_init(rng, shapes[l].out, 1, ascale));
        g.arrays.push_back(uniform_init(rng, shapes[l].out, 1, ascale));
        g.arrays.push_back(Matrix::Zero(1, shapes[l].out));
        break;
      }
      case Backbone::kGeneralizedPageRank: break;  // handled above
    }
  }
}

void init_mlp_group(ParamGroup& g, int in, int hidden, int out, util::Rng& rng) {
  double s0 = 1.0 / std::sqrt(static_cast<double>(in));
  double s1 = 1.0 / std::sqrt(static_cast<double>(hidden));
  g.arrays.push_back(uniform_init(rng, in, hidden, s0));
  g.arrays.push_back(Matrix::Zero(1, hidden));
  g.arrays.push_back(uniform_init(rng, hidden, out, s1));
  g.arrays.push_back(Matrix::Zero(1, out));
}

}  // namespace

ParameterSet build_parameter_set(const ModelConfig& cfg, std::uint64_t seed, const LearningRates& lrs) {
  if (cfg.feature_dim < 1 || cfg.num_classes < 1) throw ConfigError("model config missing data dims");
  if (cfg.num_envs < 2) throw ConfigError("model config: num_envs must be >= 2");
  ParameterSet params;
  OptimSpec enc_opt{OptimKind::kSgd, lrs.encoder};
  OptimSpec env_opt{OptimKind::kSgd, lrs.env_model};
  OptimSpec router_opt{OptimKind::kSgd, lrs.router};
  OptimSpec heads{OptimKind::kAdam, lrs.heads};

  util::Rng rng = util::make_rng(util::derive_seed(seed, "params-phi"));
  init_encoder_group(params.add_group("phi", enc_opt), cfg.encoder, cfg.feature_dim, rng);
  rng = util::make_rng(util::derive_seed(seed, "params-u"));
  init_encoder_group(params.add_group("u", env_opt), cfg.encoder, cfg.feature_dim, rng);
  rng = util::make_rng(util::derive_seed(seed, "params-w"));
  init_mlp_group(params.add_group("w", router_opt), cfg.env_input_dim(), cfg.mlp_hidden, cfg.num_envs, rng);
  rng = util::make_rng(util::derive_seed(seed, "params-d"));
  init_mlp_group(params.add_group("d", env_opt), 2 * cfg.encoder.output_dim, cfg.mlp_hidden,
                 cfg.feature_dim, rng);
  rng = util::make_rng(util::derive_seed(seed, "params-c"));
  init_mlp_group(params.add_group("c", heads), cfg.encoder.output_dim, cfg.mlp_hidden, cfg.num_classes, rng);
  OptimSpec env_heads{OptimKind::kAdam, lrs.env_classifiers};
  for (int k = 1; k <= cfg.num_envs; ++k) {
    rng = util::make_rng(util::derive_seed(seed, "params-ck", k));
    init_mlp_group(params.add_group("c_" + std::to_string(k), env_heads), cfg.encoder.output_dim,
                   cfg.mlp_hidden, cfg.num_classes, rng);
  }
  return params;
}

void validate_parameter_shapes(const ParameterSet& params, const ModelConfig& cfg) {
  ParameterSet expected = build_parameter_set(cfg, 0);
  for (const std::string& name : expected.group_names()) {
    if (!params.has_group(name)) throw ConfigError("parameter set missing group " + name);
    const auto& got = params.group(name).arrays;
    const auto& want = expected.group(name).arrays;
    if (got.size() != want.size())
      throw ConfigError("parameter group " + name + " has wrong array count");
    for (std::size_t i = 0; i < got.size(); ++i)
      if (got[i].rows() != want[i].rows() || got[i].cols() != want[i].cols())
        throw ConfigError("parameter group " + name + " array " + std::to_string(i) +
                          " has incompatible shape");
  }
}

// ---------------------------------------------------------------------------
// Forwards

Var normalized_adjacency_var(const ad::Var& adjacency) {
  const Eigen::Index n = adjacency.rows();
  Var with_loops = ad::add(adjacency, Var::constant(Matrix::Identity(n, n)));
  Var dinv_sqrt = ad::rsqrt(ad::row_sum(with_loops));
  return ad::scale_rows(ad::scale_cols(with_loops, dinv_sqrt), dinv_sqrt);
}

namespace {

Var activation(const Var& x, bool last) { return last ? ad::tanh(x) : ad::relu(x); }

Var gcn_forward(const EncoderConfig& cfg, Binder& bind, const std::string& group, const Var& adjacency,
                const Var& features) {
  Var prop = normalized_adjacency_var(adjacency);
  Var h = features;
  for (int l = 0; l < cfg.layers; ++l) {
    Var w = bind(group, 2 * l);
    Var b = bind(group, 2 * l + 1);
    h = activation(ad::add_row_broadcast(ad::matmul(prop, ad::matmul(h, w)), b), l == cfg.layers - 1);
  }
  return h;
}

// Row-stochastic-ish neighbor operator: row i sums to deg_i / (deg_i + 1).
// The +1 keeps isolated rows and relaxed near-empty neighborhoods finite.
Var sage_neighbor_operator(const Var& adjacency) {
  Var denom = ad::reciprocal(ad::add_scalar(ad::row_sum(adjacency), 1.0));
  return ad::scale_rows(adjacency, denom);
}

Matrix sample_neighbor_operator(const Matrix& adjacency, int cap, std::uint64_t seed) {
  const Eigen::Index n = adjacency.rows();
  util::Rng rng = util::make_rng(seed);
  Matrix m = Matrix::Zero(n, n);
  std::vector<int> nbrs;
  for (Eigen::Index i = 0; i < n; ++i) {
    nbrs.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (adjacency(i, j) != 0.0) nbrs.push_back(static_cast<int>(j));
    if (static_cast<int>(nbrs.size()) > cap) {
      std::shuffle(nbrs.begin(), nbrs.end(), rng);
      nbrs.resize(cap);
    }
    double w = 1.0 / (static_cast<double>(nbrs.size()) + 1.0);
    for (int j : nbrs) m(i, j) = w;
  }
  return m;
}

Var sage_forward(const EncoderConfig& cfg, Binder& bind, const std::string& group, const Var& adjacency,
                 const Var& features, std::optional<std::uint64_t> sample_seed) {
  Var prop = sample_seed.has_value()
                 ? Var::constant(sample_neighbor_operator(adjacency.value(), cfg.sage_sample_cap,
                                                          *sample_seed))
                 : sage_neighbor_operator(adjacency);
  Var h = features;
  for (int l = 0; l < cfg.layers; ++l) {
    Var wself = bind(group, 3 * l);
    Var wneigh = bind(group, 3 * l + 1);
    Var b = bind(group, 3 * l + 2);
    Var combined = ad::add(ad::matmul(h, wself), ad::matmul(prop, ad::matmul(h, wneigh)));
    h = activation(ad::add_row_broadcast(combined, b), l == cfg.layers - 1);
  }
  return h;
}

Var gat_forward(const EncoderConfig& cfg, Binder& bind, const std::string& group, const Var& adjacency,
                const Var& features) {
  const Eigen::Index n = adjacency.rows();
  Var self_adj = ad::add(adjacency, Var::constant(Matrix::Identity(n, n)));
  Var h = features;
  for (int l = 0; l < cfg.layers; ++l) {
    Var w = bind(group, 4 * l);
    Var a_src = bind(group, 4 * l + 1);
    Var a_dst = bind(group, 4 * l + 2);
    Var b = bind(group, 4 * l + 3);
    Var hw = ad::matmul(h, w);
    Var e = ad::leaky_relu(ad::outer_add(ad::matmul(hw, a_src), ad::matmul(hw, a_dst)), cfg.leaky_slope);
    // Detached row-max shift: cancels in the weighted softmax, keeps exp finite.
    Matrix shift = e.value().rowwise().maxCoeff() * Matrix::Ones(1, n);
    Var weights = ad::cwise_mul(self_adj, ad::exp(ad::sub(e, Var::constant(shift))));
    Var attn = ad::scale_rows(weights, ad::reciprocal(ad::row_sum(weights)));
    h = activation(ad::add_row_broadcast(ad::matmul(attn, hw), b), l == cfg.layers - 1);
  }
  return h;
}

Var gpr_forward(const EncoderConfig& cfg, Binder& bind, const std::string& group, const Var& adjacency,
                const Var& features) {
  Var w0 = bind(group, 0), b0 = bind(group, 1), w1 = bind(group, 2), b1 = bind(group, 3);
  Var gamma = bind(group, 4);
  Var z = ad::relu(ad::add_row_broadcast(ad::matmul(features, w0), b0));
  z = ad::add_row_broadcast(ad::matmul(z, w1), b1);
  Var prop = normalized_adjacency_var(adjacency);
  Var acc = ad::scale_var(z, ad::element(gamma, 0, 0));
  Var zt = z;
  for (int t = 1; t <= cfg.gpr_steps; ++t) {
    zt = ad::matmul(prop, zt);
    acc = ad::add(acc, ad::scale_var(zt, ad::element(gamma, t, 0)));
  }
  return ad::tanh(acc);
}

}  // namespace

Var encoder_forward(const EncoderConfig& cfg, Binder& bind, const std::string& group,
                    const Var& adjacency, const Var& features,
                    std::optional<std::uint64_t> sample_seed) {
  if (adjacency.rows() != features.rows()) throw ConfigError("encoder_forward: node count mismatch");
  switch (cfg.backbone) {
    case Backbone::kMeanAgg: return gcn_forward(cfg, bind, group, adjacency, features);
    case Backbone::kSampledNeighbor:
      return sage_forward(cfg, bind, group, adjacency, features, sample_seed);
    case Backbone::kAttention: return gat_forward(cfg, bind, group, adjacency, features);
    case Backbone::kGeneralizedPageRank: return gpr_forward(cfg, bind, group, adjacency, features);
  }
  throw ConfigError("encoder_forward: unknown backbone");
}

Var mlp_forward(Binder& bind, const std::string& group, const Var& input) {
  Var w0 = bind(group, 0), b0 = bind(group, 1), w1 = bind(group, 2), b1 = bind(group, 3);
  if (input.cols() != w0.rows()) throw ConfigError("mlp_forward: width mismatch for group " + group);
  Var h = ad::relu(ad::add_row_broadcast(ad::matmul(input, w0), b0));
  return ad::add_row_broadcast(ad::matmul(h, w1), b1);
}

Eigen::MatrixXd forward_phi(ParameterSet& params, const ModelConfig& cfg, const graph::Graph& g,
                            std::uint64_t sample_seed) {
  if (g.feature_dim() != cfg.feature_dim) throw ConfigError("forward_phi: feature dim mismatch");
  Binder bind(params, {});
  return encoder_forward(cfg.encoder, bind, "phi", Var::constant(g.adjacency),
                         Var::constant(g.features), sample_seed)
      .value();
}

graph::EnvironmentAssignment forward_env_weights(ParameterSet& params, const ModelConfig& cfg,
                                                 const graph::Graph& g, int num_envs,
                                                 std::uint64_t sample_seed) {
  if (num_envs < 2) throw ConfigError("forward_env_weights: K must be >= 2");
  if (params.group("w").arrays[3].cols() != num_envs)
    throw ConfigError("forward_env_weights: K does not match the env classifier width");
  Binder bind(params, {});
  Var he = encoder_forward(cfg.encoder, bind, "u", Var::constant(g.adjacency),
                           Var::constant(g.features), sample_seed);
  Var rho = ad::row_softmax(mlp_forward(bind, "w", he));
  return graph::EnvironmentAssignment{rho.value()};
}

Eigen::MatrixXd forward_classifier(ParameterSet& params, const std::string& group,
                                   const Eigen::MatrixXd& h) {
  Binder bind(params, {});
  return mlp_forward(bind, group, Var::constant(h)).value();
}

Eigen::MatrixXd forward_reconstructor(ParameterSet& params, const Eigen::MatrixXd& h_e,
                                      const Eigen::MatrixXd& h_i) {
  Binder bind(params, {});
  return mlp_forward(bind, "d", ad::concat_cols(Var::constant(h_e), Var::constant(h_i))).value();
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

GradCheckResult gradient_check(const std::function<ad::Var(Binder&)>& build_loss, ParameterSet& params,
                               const std::vector<std::string>& groups, int max_probes,
                               std::uint64_t seed, double step) {
  std::set<std::string> trainable(groups.begin(), groups.end());
  Binder bind(params, trainable);
  Var loss = build_loss(bind);
  std::map<std::string, std::vector<Eigen::MatrixXd>> analytic;
  if (loss.requires_grad()) loss.backward();
  for (const std::string& g : groups) analytic[g] = bind.grads(g);

  struct Probe {
    std::string group;
    std::size_t array;
    Eigen::Index i, j;
  };
  std::vector<Probe> probes;
  for (const std::string& g : groups) {
    const auto& arrays = params.group(g).arrays;
    for (std::size_t a = 0; a < arrays.size(); ++a)
      for (Eigen::Index i = 0; i < arrays[a].rows(); ++i)
        for (Eigen::Index j = 0; j < arrays[a].cols(); ++j) probes.push_back({g, a, i, j});
  }
  util::Rng rng = util::make_rng(seed);
  std::shuffle(probes.begin(), probes.end(), rng);
  if (static_cast<int>(probes.size()) > max_probes) probes.resize(max_probes);

  auto eval = [&] {
    Binder frozen(params, {});
    return build_loss(frozen).scalar();
  };

  GradCheckResult result;
  for (const Probe& p : probes) {
    double& entry = params.group(p.group).arrays[p.array](p.i, p.j);
    double original = entry;
    auto central = [&](double h) {
      entry = original + h;
      double up = eval();
      entry = original - h;
      double down = eval();
      entry = original;
      return (up - down) / (2.0 * h);
    };
    double fd_full = central(step);
    double fd_half = central(step / 2.0);
    // A valid central-difference oracle requires local smoothness; when the
    // two step sizes disagree the probe straddles a rectifier kink and is
    // skipped rather than compared.
    if (std::abs(fd_full - fd_half) > 1e-6 * std::max({1.0, std::abs(fd_full), std::abs(fd_half)})) {
      ++result.num_skipped;
      continue;
    }
    double an = analytic[p.group][p.array](p.i, p.j);
    double err = std::abs(fd_half - an) / std::max({1.0, std::abs(fd_half), std::abs(an)});
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.num_checked;
  }
  return result;
}

}  // namespace iene::nets

// SPDX-License-Identifier: Apache-2.0
#include "iene/datagen/scm.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "iene/util/errors.hpp"
#include "iene/util/rng.hpp"

namespace iene::datagen {

using nlohmann::json;

namespace {

void check_config(const SCMConfig& cfg) {
  if (cfg.d_inv < 1) throw ConfigError("SCMConfig: d_inv must be >= 1");
  if (cfg.num_train_envs < 2) throw ConfigError("SCMConfig: num_train_envs must be >= 2");
  if (cfg.num_classes < 2) throw ConfigError("SCMConfig: num_classes must be >= 2");
  if (cfg.d_spu == 0 && cfg.test_flip)
    throw ConfigError("SCMConfig: test_flip requires a spurious block (d_spu >= 1)");
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(cfg.graph_model.intra_p) || !prob_ok(cfg.graph_model.inter_p))
    throw ConfigError("SCMConfig: edge probabilities must lie in [0,1]");
  if (cfg.causal_variant != 'a' && cfg.causal_variant != 'b' && cfg.causal_variant != 'c')
    throw ConfigError("SCMConfig: causal_variant must be one of a, b, c");
  if (cfg.num_val_graphs < 1 || cfg.num_test_graphs < 1)
    throw ConfigError("SCMConfig: need at least one validation and one test graph");
}

Eigen::MatrixXd gaussian_matrix(util::Rng& rng, int rows, int cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

struct EnvSpec {
  Eigen::MatrixXd spu_codebook;  // C x d_spu
  Eigen::VectorXd irr_mean;      // d_irr
  double inv_shift = 0.0;        // variant c: additive shift on invariant column 0
  double intra_delta = 0.0;      // variant b: extra intra-class edge probability
};

graph::Graph generate_graph(const SCMConfig& cfg, const Eigen::MatrixXd& inv_codebook,
                            const EnvSpec& env, int env_id, std::uint64_t seed) {
  util::Rng rng = util::make_rng(seed);
  std::uniform_int_distribution<int> label_dist(0, cfg.num_classes - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int n = cfg.num_nodes;
  Eigen::VectorXi labels(n);
  for (int i = 0; i < n; ++i) labels[i] = label_dist(rng);

  graph::Graph g;
  g.num_nodes = n;
  g.num_classes = cfg.num_classes;
  g.labels = labels;
  g.env_id = env_id;
  g.adjacency = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double p = labels[i] == labels[j] ? cfg.graph_model.intra_p + env.intra_delta
                                        : cfg.graph_model.inter_p;
      if (coin(rng) < p) {
        g.adjacency(i, j) = 1.0;
        g.adjacency(j, i) = 1.0;
      }
    }
  }

  const int d = cfg.d_inv + cfg.d_spu + cfg.d_irr;
  g.features.resize(n, d);
  for (int i = 0; i < n; ++i) {
    int y = labels[i];
    for (int j = 0; j < cfg.d_inv; ++j)
      g.features(i, j) = inv_codebook(y, j) + cfg.noise_scale * normal(rng);
    g.features(i, 0) += env.inv_shift;
    for (int j = 0; j < cfg.d_spu; ++j)
      g.features(i, cfg.d_inv + j) =
          cfg.spurious_strength * env.spu_codebook(y, j) + cfg.noise_scale * normal(rng);
    for (int j = 0; j < cfg.d_irr; ++j)
      g.features(i, cfg.d_inv + cfg.d_spu + j) = env.irr_mean[j] + cfg.noise_scale * normal(rng);
  }

  g.train_mask = graph::empty_mask(n);
  g.val_mask = graph::empty_mask(n);
  g.test_mask = graph::empty_mask(n);
  return g;
}

}  // namespace

GeneratedDataset generate_scm_dataset(const SCMConfig& cfg) {
  check_config(cfg);
  util::Rng rng = util::make_rng(util::derive_seed(cfg.seed, "scm-codebooks"));

  GeneratedDataset out;
  GroundTruth& truth = out.truth;
  truth.d_inv = cfg.d_inv;
  truth.d_spu = cfg.d_spu;
  truth.d_irr = cfg.d_irr;
  truth.inv_codebook = gaussian_matrix(rng, cfg.num_classes, cfg.d_inv);

  // Train-environment codebooks are centered around a shared mean so the
  // test-time flip is exactly the negation of the training mixture.
  Eigen::MatrixXd mean_codebook = gaussian_matrix(rng, cfg.num_classes, cfg.d_spu);
  std::vector<Eigen::MatrixXd> deltas;
  Eigen::MatrixXd delta_mean = Eigen::MatrixXd::Zero(cfg.num_classes, cfg.d_spu);
  for (int e = 0; e < cfg.num_train_envs; ++e) {
    deltas.push_back(gaussian_matrix(rng, cfg.num_classes, cfg.d_spu));
    delta_mean += deltas.back();
  }
  delta_mean /= static_cast<double>(cfg.num_train_envs);
  for (auto& dlt : deltas) dlt -= delta_mean;
  truth.mean_codebook = mean_codebook;
  for (int e = 0; e < cfg.num_train_envs; ++e)
    truth.train_codebooks.push_back(mean_codebook + cfg.env_codebook_spread * deltas[e]);

  for (int j = 0; j < cfg.d_inv; ++j) truth.column_roles.push_back("invariant");
  for (int j = 0; j < cfg.d_spu; ++j) truth.column_roles.push_back("spurious");
  for (int j = 0; j < cfg.d_irr; ++j) truth.column_roles.push_back("irrelevant");

  std::normal_distribution<double> normal(0.0, 1.0);
  auto fresh_irr_mean = [&] {
    Eigen::VectorXd m(cfg.d_irr);
    for (int j = 0; j < cfg.d_irr; ++j) m[j] = cfg.irr_env_spread * normal(rng);
    return m;
  };
  auto fresh_inv_shift = [&] {
    return cfg.causal_variant == 'c' ? cfg.env_codebook_spread * normal(rng) : 0.0;
  };

  graph::MultiGraphDataset& ds = out.dataset;
  ds.metric = graph::metric_from_name(cfg.metric);

  for (int e = 0; e < cfg.num_train_envs; ++e) {
    EnvSpec env;
    env.spu_codebook = truth.train_codebooks[e];
    env.irr_mean = fresh_irr_mean();
    env.inv_shift = fresh_inv_shift();
    if (cfg.causal_variant == 'b' && e == 0) env.intra_delta = cfg.structure_delta;
    graph::Graph g =
        generate_graph(cfg, truth.inv_codebook, env, e, util::derive_seed(cfg.seed, "train-graph", e));
    g.train_mask = graph::full_mask(cfg.num_nodes);
    ds.train_graphs.push_back(std::move(g));
  }

  double val_t = cfg.val_shift >= 0.0 ? cfg.val_shift : (cfg.test_flip ? 0.5 : 0.0);
  for (int i = 0; i < cfg.num_val_graphs; ++i) {
    EnvSpec env;
    env.spu_codebook = (1.0 - 2.0 * val_t) * mean_codebook;
    env.irr_mean = fresh_irr_mean();
    env.inv_shift = fresh_inv_shift();
    graph::Graph g = generate_graph(cfg, truth.inv_codebook, env, cfg.num_train_envs + i,
                                    util::derive_seed(cfg.seed, "val-graph", i));
    g.val_mask = graph::full_mask(cfg.num_nodes);
    ds.val_graphs.push_back(std::move(g));
  }

  std::vector<double> shifts = cfg.test_shifts;
  if (shifts.empty()) shifts.assign(cfg.num_test_graphs, cfg.test_flip ? 1.0 : 0.0);
  if (static_cast<int>(shifts.size()) != cfg.num_test_graphs)
    throw ConfigError("SCMConfig: test_shifts size must match num_test_graphs");
  truth.test_shifts = shifts;
  for (int i = 0; i < cfg.num_test_graphs; ++i) {
    EnvSpec env;
    env.spu_codebook = (1.0 - 2.0 * shifts[i]) * mean_codebook;
    env.irr_mean = fresh_irr_mean();
    env.inv_shift = fresh_inv_shift();
    graph::Graph g = generate_graph(cfg, truth.inv_codebook, env, cfg.num_train_envs + cfg.num_val_graphs + i,
                                    util::derive_seed(cfg.seed, "test-graph", i));
    g.test_mask = graph::full_mask(cfg.num_nodes);
    ds.test_graphs.push_back(std::move(g));
  }
  return out;
}

graph::Graph apply_artificial_transformation(const graph::Graph& g, const Eigen::MatrixXd& env_codebook,
                                             double strength, int d_inv, std::uint64_t seed) {
  if (env_codebook.rows() != g.num_classes)
    throw InputError("apply_artificial_transformation: codebook rows must equal class count");
  const int d_spu = static_cast<int>(env_codebook.cols());
  if (d_inv < 0 || d_inv + d_spu > g.feature_dim())
    throw InputError("apply_artificial_transformation: spurious block out of range");
  util::Rng rng = util::make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  graph::Graph out = g;
  for (int i = 0; i < g.num_nodes; ++i)
    for (int j = 0; j < d_spu; ++j)
      out.features(i, d_inv + j) = strength * env_codebook(g.labels[i], j) + 0.3 * normal(rng);
  return out;
}

LinearSCMSample generate_linear_scm(int num_envs, int samples_per_env, int d_inv, int d_spu,
                                    const std::vector<double>& env_shift_scales, std::uint64_t seed,
                                    const Eigen::VectorXd* beta_override) {
  if (num_envs < 2) throw ConfigError("generate_linear_scm: need at least 2 environments");
  if (static_cast<int>(env_shift_scales.size()) != num_envs)
    throw ConfigError("generate_linear_scm: one shift scale per environment required");

  const int d = d_inv + d_spu;
  util::Rng rng = util::make_rng(util::derive_seed(seed, "linear-scm"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> mag(0.5, 1.5);

  LinearSCMSample sample;
  sample.d_inv = d_inv;
  sample.d_spu = d_spu;
  sample.shift_scales = env_shift_scales;

  if (beta_override != nullptr) {
    sample.beta = *beta_override;
  } else {
    sample.beta.resize(d_inv);
    for (int j = 0; j < d_inv; ++j) sample.beta[j] = (normal(rng) >= 0 ? 1.0 : -1.0) * mag(rng);
  }

  // Orthogonal mixing: 45-degree rotations pairing each invariant coordinate
  // with a spurious one. Orthogonality makes the unmixing a plain transpose
  // and guarantees the scrambled observation spreads beta onto the observed
  // spurious coordinates.
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(d, d);
  const double c = std::cos(M_PI / 4.0), s = std::sin(M_PI / 4.0);
  for (int i = 0; i < d_inv && d_spu > 0; ++i) {
    int j = d_inv + (i % d_spu);
    Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(d, d);
    rot(i, i) = c;
    rot(j, j) = c;
    rot(i, j) = -s;
    rot(j, i) = s;
    w = rot * w;
  }
  sample.W = w;
  sample.W_tilde = w.leftCols(d_inv).transpose();

  const double noise = 0.3;
  for (int e = 0; e < num_envs; ++e) {
    Eigen::MatrixXd xi(samples_per_env, d_inv);
    for (int i = 0; i < samples_per_env; ++i)
      for (int j = 0; j < d_inv; ++j) xi(i, j) = normal(rng);
    Eigen::VectorXd y = xi * sample.beta;
    for (int i = 0; i < samples_per_env; ++i) y[i] += noise * normal(rng);
    Eigen::MatrixXd xs(samples_per_env, d_spu);
    for (int i = 0; i < samples_per_env; ++i)
      for (int j = 0; j < d_spu; ++j)
        xs(i, j) = env_shift_scales[e] * y[i] + noise * normal(rng);
    Eigen::MatrixXd z(samples_per_env, d);
    z << xi, xs;
    sample.X.push_back(z * w.transpose());
    sample.Y.push_back(std::move(y));
  }
  return sample;
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows) {
  Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j].get<double>();
  return m;
}

}  // namespace

void write_ground_truth(const std::filesystem::path& dataset_dir, const GroundTruth& truth) {
  json j;
  j["d_inv"] = truth.d_inv;
  j["d_spu"] = truth.d_spu;
  j["d_irr"] = truth.d_irr;
  j["column_roles"] = truth.column_roles;
  j["inv_codebook"] = matrix_to_json(truth.inv_codebook);
  j["mean_codebook"] = matrix_to_json(truth.mean_codebook);
  j["test_shifts"] = truth.test_shifts;
  json train = json::array();
  for (const auto& cb : truth.train_codebooks) train.push_back(matrix_to_json(cb));
  j["train_codebooks"] = train;
  std::ofstream out(dataset_dir / "ground_truth.json");
  if (!out) throw InputError("cannot write ground truth sidecar");
  out << j.dump(2) << "\n";
}

GroundTruth read_ground_truth(const std::filesystem::path& dataset_dir) {
  std::ifstream in(dataset_dir / "ground_truth.json");
  if (!in) throw CorruptionError("missing ground_truth.json");
  json j = json::parse(in);
  GroundTruth truth;
  truth.d_inv = j.at("d_inv").get<int>();
  truth.d_spu = j.at("d_spu").get<int>();
  truth.d_irr = j.at("d_irr").get<int>();
  truth.column_roles = j.at("column_roles").get<std::vector<std::string>>();
  truth.inv_codebook = matrix_from_json(j.at("inv_codebook"));
  truth.mean_codebook = matrix_from_json(j.at("mean_codebook"));
  truth.test_shifts = j.at("test_shifts").get<std::vector<double>>();
  for (const auto& cb : j.at("train_codebooks")) truth.train_codebooks.push_back(matrix_from_json(cb));
  return truth;
}

}  // namespace iene::datagen

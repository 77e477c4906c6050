// SPDX-License-Identifier: Apache-2.0
#include "iene/oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iene/util/errors.hpp"
#include "iene/util/rng.hpp"

namespace iene::oracle {

namespace {

Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::MatrixXd gram = x.transpose() * x;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  if (lu.rank() < x.cols()) throw DegenerateInputError("per_env_ols: rank-deficient design");
  return lu.solve(x.transpose() * y);
}

double residual_var(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  Eigen::VectorXd r = y - x * w;
  return r.squaredNorm() / static_cast<double>(x.rows());
}

}  // namespace

OlsSolution per_env_ols(const datagen::LinearSCMSample& sample) {
  OlsSolution out;
  Eigen::Index total = 0;
  for (const auto& x : sample.X) {
    if (x.rows() < x.cols()) throw InputError("per_env_ols: fewer samples than dimensions");
    total += x.rows();
  }
  Eigen::MatrixXd pooled_x(total, sample.X.front().cols());
  Eigen::VectorXd pooled_y(total);
  Eigen::Index at = 0;
  for (int e = 0; e < sample.num_envs(); ++e) {
    out.per_env.push_back(solve_normal_equations(sample.X[e], sample.Y[e]));
    out.residual_variance.push_back(residual_var(sample.X[e], sample.Y[e], out.per_env.back()));
    pooled_x.middleRows(at, sample.X[e].rows()) = sample.X[e];
    pooled_y.segment(at, sample.Y[e].size()) = sample.Y[e];
    at += sample.X[e].rows();
  }
  out.pooled = solve_normal_equations(pooled_x, pooled_y);
  out.pooled_residual_variance = residual_var(pooled_x, pooled_y, out.pooled);
  return out;
}

IdentifiabilityReport check_linear_identifiability(const datagen::LinearSCMSample& sample,
                                                   bool restricted_to_invariant) {
  IdentifiabilityReport report;
  const int envs = sample.num_envs();

  std::vector<Eigen::VectorXd> inv_coef, full_coef;
  for (int e = 0; e < envs; ++e) {
    Eigen::MatrixXd z = sample.X[e] * sample.W_tilde.transpose();  // recovered invariant block
    inv_coef.push_back(solve_normal_equations(z, sample.Y[e]));
    full_coef.push_back(solve_normal_equations(sample.X[e], sample.Y[e]));
  }
  auto max_pairwise = [](const std::vector<Eigen::VectorXd>& coefs) {
    double worst = 0.0;
    for (std::size_t a = 0; a < coefs.size(); ++a)
      for (std::size_t b = a + 1; b < coefs.size(); ++b)
        worst = std::max(worst, (coefs[a] - coefs[b]).norm());
    return worst;
  };
  report.invariant_disagreement = max_pairwise(inv_coef);
  report.unrestricted_disagreement = max_pairwise(full_coef);

  OlsSolution ols = per_env_ols(sample);
  report.pooled_coefficients = ols.pooled;
  for (int j = sample.d_inv; j < sample.dim(); ++j)
    report.max_spurious_pooled_weight =
        std::max(report.max_spurious_pooled_weight, std::abs(ols.pooled[j]));

  report.invariant_predictor_stable = report.invariant_disagreement < report.invariant_threshold;
  report.environments_distinguishable = report.unrestricted_disagreement > report.spurious_threshold;
  report.identifiable = report.invariant_predictor_stable && report.environments_distinguishable;
  report.disagreement =
      restricted_to_invariant ? report.invariant_disagreement : report.unrestricted_disagreement;
  return report;
}

std::pair<double, double> brute_variance(const Eigen::MatrixXd& losses, const graph::Mask& node_mask) {
  const int n = static_cast<int>(losses.rows());
  const int k = static_cast<int>(losses.cols());
  std::vector<int> rows;
  for (int v = 0; v < n; ++v)
    if (node_mask.empty() || node_mask[v]) rows.push_back(v);
  if (rows.empty() || k == 0) return {0.0, 0.0};

  // vrex: variance across environments of the per-environment mean loss.
  std::vector<double> env_mean(k, 0.0);
  for (int e = 0; e < k; ++e) {
    double s = 0.0;
    for (int v : rows) s += losses(v, e);
    env_mean[e] = s / static_cast<double>(rows.size());
  }
  double grand = 0.0;
  for (int e = 0; e < k; ++e) grand += env_mean[e];
  grand /= static_cast<double>(k);
  double vrex = 0.0;
  for (int e = 0; e < k; ++e) vrex += (env_mean[e] - grand) * (env_mean[e] - grand);
  vrex /= static_cast<double>(k);

  // nvrex: mean across nodes of the per-node variance across environments.
  double nvrex = 0.0;
  for (int v : rows) {
    double m = 0.0;
    for (int e = 0; e < k; ++e) m += losses(v, e);
    m /= static_cast<double>(k);
    double var = 0.0;
    for (int e = 0; e < k; ++e) var += (losses(v, e) - m) * (losses(v, e) - m);
    nvrex += var / static_cast<double>(k);
  }
  nvrex /= static_cast<double>(rows.size());
  return {vrex, nvrex};
}

std::pair<double, double> brute_variance(const Eigen::MatrixXd& losses) {
  return brute_variance(losses, graph::Mask{});
}

double hsic_statistic(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const Eigen::Index n = x.rows();
  if (y.rows() != n) throw InputError("hsic_statistic: row mismatch");
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  Eigen::MatrixXd kc = h * (x * x.transpose()) * h;
  Eigen::MatrixXd lc = h * (y * y.transpose()) * h;
  double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return kc.cwiseProduct(lc.transpose()).sum() / denom;
}

double hsic_permutation_test(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int num_perms,
                             std::uint64_t seed) {
  if (num_perms < 100) throw InputError("hsic_permutation_test: num_perms must be >= 100");
  double observed = hsic_statistic(x, y);
  util::Rng rng = util::make_rng(seed);
  std::vector<int> idx(static_cast<std::size_t>(y.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  int at_least = 0;
  Eigen::MatrixXd shuffled(y.rows(), y.cols());
  for (int p = 0; p < num_perms; ++p) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Eigen::Index i = 0; i < y.rows(); ++i) shuffled.row(i) = y.row(idx[i]);
    if (hsic_statistic(x, shuffled) >= observed) ++at_least;
  }
  return static_cast<double>(at_least) / static_cast<double>(num_perms);
}

double histogram_mi(const Eigen::VectorXd& values, const std::vector<int>& side, int bins) {
  if (values.size() != static_cast<Eigen::Index>(side.size()))
    throw InputError("histogram_mi: size mismatch");
  const int n = static_cast<int>(values.size());
  int k = 1 + *std::max_element(side.begin(), side.end());
  double lo = values.minCoeff(), hi = values.maxCoeff();
  if (hi <= lo) return 0.0;
  double width = (hi - lo) / bins;
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(bins, k);
  for (int i = 0; i < n; ++i) {
    int b = std::min(bins - 1, static_cast<int>((values[i] - lo) / width));
    joint(b, side[i]) += 1.0;
  }
  joint /= static_cast<double>(n);
  Eigen::VectorXd pb = joint.rowwise().sum();
  Eigen::VectorXd pk = joint.colwise().sum();
  double mi = 0.0;
  for (int b = 0; b < bins; ++b)
    for (int e = 0; e < k; ++e)
      if (joint(b, e) > 0.0) mi += joint(b, e) * std::log(joint(b, e) / (pb[b] * pk[e]));
  return mi;
}

double histogram_mi_block(const Eigen::MatrixXd& block, const std::vector<int>& side, int bins) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < block.cols(); ++j) total += histogram_mi(block.col(j), side, bins);
  return total / static_cast<double>(block.cols());
}

Eigen::MatrixXd probe_scores(const LinearProbe& probe, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z(x.rows(), x.cols() + 1);
  z << x, Eigen::VectorXd::Ones(x.rows());
  return z * probe.weights;
}

LinearProbe fit_least_squares_probe(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, int num_classes,
                                    double ridge) {
  Eigen::MatrixXd z(x.rows(), x.cols() + 1);
  z << x, Eigen::VectorXd::Ones(x.rows());
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(x.rows(), num_classes);
  for (Eigen::Index i = 0; i < y.size(); ++i) targets(i, y[i]) = 1.0;
  Eigen::MatrixXd gram = z.transpose() * z;
  gram.diagonal().array() += ridge;
  LinearProbe probe;
  probe.weights = gram.ldlt().solve(z.transpose() * targets);
  return probe;
}

LinearProbe fit_logistic_probe(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, int num_classes,
                               int iters, double lr) {
  Eigen::MatrixXd z(x.rows(), x.cols() + 1);
  z << x, Eigen::VectorXd::Ones(x.rows());
  const double n = static_cast<double>(x.rows());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(z.cols(), num_classes);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(x.rows(), num_classes);
  for (Eigen::Index i = 0; i < y.size(); ++i) onehot(i, y[i]) = 1.0;
  for (int it = 0; it < iters; ++it) {
    Eigen::MatrixXd logits = z * w;
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::RowVectorXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
      p.row(i) = e / e.sum();
    }
    w -= lr * (z.transpose() * (p - onehot)) / n;
  }
  return LinearProbe{w};
}

double probe_accuracy(const LinearProbe& probe, const Eigen::MatrixXd& x, const Eigen::VectorXi& y) {
  Eigen::MatrixXd s = probe_scores(probe, x);
  int hits = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index best;
    s.row(i).maxCoeff(&best);
    hits += best == y[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(s.rows());
}

double probe_log_loss(const LinearProbe& probe, const Eigen::MatrixXd& x, const Eigen::VectorXi& y) {
  Eigen::MatrixXd s = probe_scores(probe, x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double m = s.row(i).maxCoeff();
    double lse = m + std::log((s.row(i).array() - m).exp().sum());
    total += lse - s(i, y[i]);
  }
  return total / static_cast<double>(s.rows());
}

}  // namespace iene::oracle

// SPDX-License-Identifier: Apache-2.0
#include "iene/ad/autodiff.hpp"

#include <doctest.h>

#include <random>

using iene::ad::Matrix;
using iene::ad::Var;

namespace {

// Central finite differences over every entry of every leaf, compared against
// one reverse pass. Returns the max relative error.
double fd_check(const std::function<Var(const std::vector<Var>&)>& build, std::vector<Matrix> leaves,
                double step = 1e-6) {
  std::vector<Var> vars;
  for (const Matrix& m : leaves) vars.push_back(Var::leaf(m));
  Var loss = build(vars);
  loss.backward();

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (Eigen::Index i = 0; i < leaves[li].rows(); ++i) {
      for (Eigen::Index j = 0; j < leaves[li].cols(); ++j) {
        auto eval = [&](double delta) {
          std::vector<Var> probe;
          for (std::size_t k = 0; k < leaves.size(); ++k) {
            Matrix m = leaves[k];
            if (k == li) m(i, j) += delta;
            probe.push_back(Var::constant(m));
          }
          return build(probe).scalar();
        };
        double fd = (eval(step) - eval(-step)) / (2.0 * step);
        double an = vars[li].grad()(i, j);
        double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

Matrix random_matrix(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

}  // namespace

TEST_CASE("arithmetic and reductions match finite differences") {
  std::mt19937_64 rng(7);
  Matrix a = random_matrix(rng, 4, 3);
  Matrix b = random_matrix(rng, 4, 3);
  Matrix w = random_matrix(rng, 3, 5);

  CHECK(fd_check([](const std::vector<Var>& v) { return iene::ad::sum_all(iene::ad::add(v[0], v[1])); },
                 {a, b}) < 1e-8);
  CHECK(fd_check([](const std::vector<Var>& v) { return iene::ad::mean_all(iene::ad::cwise_mul(v[0], v[1])); },
                 {a, b}) < 1e-8);
  CHECK(fd_check([](const std::vector<Var>& v) { return iene::ad::sum_all(iene::ad::matmul(v[0], v[1])); },
                 {a, w}) < 1e-8);
  CHECK(fd_check(
            [](const std::vector<Var>& v) {
              return iene::ad::sum_all(iene::ad::square(iene::ad::row_mean(iene::ad::matmul(v[0], v[1]))));
            },
            {a, w}) < 1e-8);
}

TEST_CASE("nonlinearities match finite differences") {
  std::mt19937_64 rng(11);
  Matrix a = random_matrix(rng, 5, 4);
  CHECK(fd_check([](const std::vector<Var>& v) { return iene::ad::sum_all(iene::ad::tanh(v[0])); }, {a}) <
        1e-8);
  CHECK(fd_check([](const std::vector<Var>& v) { return iene::ad::sum_all(iene::ad::exp(v[0])); }, {a}) <
        1e-7);
  CHECK(fd_check(
            [](const std::vector<Var>& v) { return iene::ad::sum_all(iene::ad::leaky_relu(v[0], 0.2)); },
            {a}) < 1e-7);
  Matrix pos = a.array().abs() + 0.5;
  CHECK(fd_check([](const std::vector<Var>& v) { return iene::ad::sum_all(iene::ad::rsqrt(v[0])); }, {pos}) <
        1e-7);
  CHECK(fd_check([](const std::vector<Var>& v) { return iene::ad::sum_all(iene::ad::reciprocal(v[0])); },
                 {pos}) < 1e-7);
  CHECK(fd_check([](const std::vector<Var>& v) { return iene::ad::sum_all(iene::ad::sqrt(v[0])); }, {pos}) <
        1e-7);
}

TEST_CASE("structured ops match finite differences") {
  std::mt19937_64 rng(13);
  Matrix m = random_matrix(rng, 4, 4);
  Matrix v = random_matrix(rng, 4, 1).array().abs() + 0.3;
  Matrix s = random_matrix(rng, 4, 1);
  Matrix t = random_matrix(rng, 4, 1);
  Matrix row = random_matrix(rng, 1, 4);

  CHECK(fd_check(
            [](const std::vector<Var>& x) { return iene::ad::sum_all(iene::ad::scale_rows(x[0], x[1])); },
            {m, v}) < 1e-8);
  CHECK(fd_check(
            [](const std::vector<Var>& x) { return iene::ad::sum_all(iene::ad::scale_cols(x[0], x[1])); },
            {m, v}) < 1e-8);
  CHECK(fd_check(
            [](const std::vector<Var>& x) {
              return iene::ad::sum_all(iene::ad::square(iene::ad::outer_add(x[0], x[1])));
            },
            {s, t}) < 1e-8);
  CHECK(fd_check(
            [](const std::vector<Var>& x) {
              return iene::ad::sum_all(iene::ad::square(iene::ad::add_row_broadcast(x[0], x[1])));
            },
            {m, row}) < 1e-8);
  CHECK(fd_check(
            [](const std::vector<Var>& x) {
              return iene::ad::mean_all(iene::ad::square(iene::ad::center_columns(x[0])));
            },
            {m}) < 1e-8);
  CHECK(fd_check(
            [](const std::vector<Var>& x) {
              return iene::ad::sum_all(iene::ad::square(iene::ad::concat_cols(x[0], x[1])));
            },
            {m, s}) < 1e-8);
}

TEST_CASE("softmax and cross entropy match finite differences") {
  std::mt19937_64 rng(17);
  Matrix scores = random_matrix(rng, 6, 3);
  Eigen::VectorXi labels(6);
  labels << 0, 1, 2, 1, 0, 2;

  CHECK(fd_check(
            [&](const std::vector<Var>& x) {
              return iene::ad::mean_all(iene::ad::cross_entropy_rows(x[0], labels));
            },
            {scores}) < 1e-7);
  CHECK(fd_check(
            [](const std::vector<Var>& x) {
              return iene::ad::mean_all(iene::ad::square(iene::ad::row_softmax(x[0])));
            },
            {scores}) < 1e-7);
}

TEST_CASE("scalar ops and scatter match finite differences") {
  std::mt19937_64 rng(23);
  Matrix a(1, 1), b(1, 1);
  a << 0.7;
  b << -1.3;
  CHECK(fd_check([](const std::vector<Var>& x) { return iene::ad::div_scalar(x[0], x[1]); }, {a, b}) < 1e-8);
  CHECK(fd_check(
            [](const std::vector<Var>& x) {
              return iene::ad::sum_all(iene::ad::scale_var(x[0], x[1]));
            },
            {Matrix(random_matrix(rng, 3, 3)), a}) < 1e-8);

  Matrix base = Matrix::Zero(5, 5);
  base(0, 1) = base(1, 0) = 1.0;
  std::vector<std::pair<int, int>> pairs{{0, 1}, {2, 3}, {0, 4}};
  Eigen::VectorXd coeff(3);
  coeff << -1.0, 1.0, 1.0;
  Matrix theta = random_matrix(rng, 3, 1).array().abs() * 0.3;
  CHECK(fd_check(
            [&](const std::vector<Var>& x) {
              Var view = iene::ad::scatter_symmetric(base, pairs, coeff, x[0]);
              return iene::ad::sum_all(iene::ad::square(view));
            },
            {theta}) < 1e-8);
}

TEST_CASE("gradients accumulate when a leaf is reused") {
  Matrix a(2, 2);
  a << 1.0, 2.0, 3.0, 4.0;
  Var x = Var::leaf(a);
  Var loss = iene::ad::sum_all(iene::ad::add(iene::ad::matmul(x, x), x));
  loss.backward();
  auto build = [](const std::vector<Var>& v) {
    return iene::ad::sum_all(iene::ad::add(iene::ad::matmul(v[0], v[0]), v[0]));
  };
  CHECK(fd_check(build, {a}) < 1e-8);
}

TEST_CASE("backward rejects non-scalar outputs") {
  Var x = Var::leaf(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(iene::ad::tanh(x).backward(), iene::InputError);
}

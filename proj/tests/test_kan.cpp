#include <doctest.h>

#include <random>

#include <Eigen/Dense>

#include "roboka/kan.hpp"

using namespace roboka;
using V = Eigen::VectorXd;

namespace {

V random_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  V v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

double rel(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central difference of sum(upstream .* f(x)) with respect to one scalar.
template <typename F>
double fd(double& param, const V& upstream, F&& f, double h = 1e-5) {
  const double saved = param;
  param = saved + h;
  const double plus = upstream.dot(f());
  param = saved - h;
  const double minus = upstream.dot(f());
  param = saved;
  return (plus - minus) / (2 * h);
}

}  // namespace

TEST_CASE("zero coefficients give a zero output") {
  KanLayer<double> layer(5, 3, GridConfig{});
  std::mt19937_64 rng(1);
  CHECK(kan_forward(layer, random_vec(5, rng)).isZero(0.0));
}

TEST_CASE("least-squares identity spline") {
  KanLayer<double> layer(2, 1, GridConfig{});
  const auto& grid = layer.grid();
  const int m = grid.num_basis();
  const int samples = 201;
  Eigen::MatrixXd a(samples, m);
  V y(samples);
  for (int s = 0; s < samples; ++s) {
    const double x = -2.0 + 4.0 * s / (samples - 1);
    a.row(s) = basis_eval(grid, x).transpose();
    y[s] = x;
  }
  const V coef = a.colPivHouseholderQr().solve(y);
  layer.edge(0, 0) = coef.transpose();

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.9, 1.9);
  for (int n = 0; n < 50; ++n) {
    V x(2);
    x << u(rng), u(rng);
    CHECK(std::abs(kan_forward(layer, x)[0] - x[0]) < 1e-3);
  }
}

TEST_CASE("single layer is additive over input coordinates") {
  std::mt19937_64 rng(4);
  KanLayer<double> layer(3, 4, GridConfig{});
  layer.init_random(rng);
  const V x = random_vec(3, rng);
  const V full = kan_forward(layer, x);

  V sum = V::Zero(4);
  const int m = layer.num_basis();
  for (int i = 0; i < 3; ++i) {
    KanLayer<double> masked = layer.zeros_like();
    masked.coeffs().middleCols(i * m, m) = layer.coeffs().middleCols(i * m, m);
    sum += kan_forward(masked, x);
  }
  CHECK((full - sum).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("stacked layers are not additive") {
  std::mt19937_64 rng(6);
  bool coupled = false;
  for (int trial = 0; trial < 20 && !coupled; ++trial) {
    KanLayer<double> l1(2, 3, GridConfig{}), l2(3, 1, GridConfig{});
    l1.coeffs() = Eigen::MatrixXd::Random(3, 2 * l1.num_basis());
    l2.coeffs() = Eigen::MatrixXd::Random(1, 3 * l2.num_basis());
    auto f = [&](double a, double b) {
      V x(2);
      x << a, b;
      return kan_forward(l2, kan_forward(l1, x))[0];
    };
    // f additive  <=>  f(a,b) + f(a',b') == f(a,b') + f(a',b)
    const double gap = f(-1.1, 0.4) + f(0.9, -0.7) - f(-1.1, -0.7) - f(0.9, 0.4);
    coupled = std::abs(gap) > 1e-6;
  }
  CHECK(coupled);
}

TEST_CASE("KAN backward with zero upstream") {
  std::mt19937_64 rng(8);
  KanLayer<double> layer(4, 3, GridConfig{}, true);
  layer.init_random(rng);
  const auto g = kan_backward(layer, random_vec(4, rng), V::Zero(3));
  CHECK(g.coeffs.isZero(0.0));
  CHECK(g.base->isZero(0.0));
  CHECK(g.input.isZero(0.0));
}

TEST_CASE("KAN gradients match finite differences") {
  std::mt19937_64 rng(10);
  for (bool base : {false, true}) {
    KanLayer<double> layer(4, 3, GridConfig{}, base);
    layer.init_random(rng);
    layer.coeffs() += Eigen::MatrixXd::Random(3, layer.coeffs().cols());
    V x = random_vec(4, rng, 0.8);
    const V up = random_vec(3, rng);
    const auto g = kan_backward(layer, x, up);
    auto f = [&] { return kan_forward(layer, x); };

    for (Eigen::Index k = 0; k < layer.coeffs().size(); ++k) {
      const double n = fd(layer.coeffs().data()[k], up, f);
      const double a = g.coeffs.data()[k];
      if (a == 0.0) CHECK(std::abs(n) < 1e-9);
      else CHECK(rel(a, n) < 1e-5);
    }
    if (base)
      for (Eigen::Index k = 0; k < layer.base_weight().size(); ++k)
        CHECK(rel(g.base->data()[k], fd(layer.base_weight().data()[k], up, f)) < 1e-5);
    for (int i = 0; i < 4; ++i) CHECK(rel(g.input[i], fd(x[i], up, f)) < 1e-4);
  }
}

TEST_CASE("KAN input gradient vanishes where clamped") {
  std::mt19937_64 rng(12);
  KanLayer<double> layer(2, 2, GridConfig{});
  layer.init_random(rng);
  V x(2);
  x << 3.5, -0.2;
  const auto g = kan_backward(layer, x, V::Ones(2));
  CHECK(g.input[0] == 0.0);
  CHECK(g.input[1] != 0.0);
}

TEST_CASE("KAN shape errors") {
  KanLayer<double> layer(3, 2, GridConfig{});
  CHECK_THROWS_AS(kan_forward(layer, V::Zero(4)), ShapeError);
  CHECK_THROWS_AS(kan_backward(layer, V::Zero(3), V::Zero(3)), ShapeError);
  CHECK_THROWS_AS(KanLayer<double>(0, 2, GridConfig{}), ShapeError);
}

TEST_CASE("MLP identity and relu") {
  MlpLayer<double> id(4, 4, Activation::identity);
  id.weight().setIdentity();
  std::mt19937_64 rng(14);
  const V x = random_vec(4, rng);
  CHECK(mlp_forward(id, x) == x);

  MlpLayer<double> relu(3, 2, Activation::relu);
  relu.weight().setOnes();
  CHECK(mlp_forward(relu, V::Constant(3, -1.0)).isZero(0.0));
}

TEST_CASE("MLP gradients match finite differences") {
  std::mt19937_64 rng(16);
  for (Activation act : {Activation::relu, Activation::identity, Activation::sigmoid}) {
    MlpLayer<double> layer(5, 4, act);
    layer.init_random(rng);
    layer.bias() = random_vec(4, rng, 0.5);
    V x = random_vec(5, rng);
    const V up = random_vec(4, rng);
    const auto g = mlp_backward(layer, x, up);
    auto f = [&] { return mlp_forward(layer, x); };
    for (Eigen::Index k = 0; k < layer.weight().size(); ++k) {
      const double a = g.weight.data()[k], n = fd(layer.weight().data()[k], up, f);
      if (a == 0.0) CHECK(std::abs(n) < 1e-9);
      else CHECK(rel(a, n) < 1e-5);
    }
    for (int j = 0; j < 4; ++j) {
      const double a = g.bias[j], n = fd(layer.bias()[j], up, f);
      if (a == 0.0) CHECK(std::abs(n) < 1e-9);
      else CHECK(rel(a, n) < 1e-5);
    }
    for (int i = 0; i < 5; ++i) CHECK(rel(g.input[i], fd(x[i], up, f)) < 1e-5);
  }
}

TEST_CASE("MLP shape errors") {
  MlpLayer<double> layer(3, 2, Activation::relu);
  CHECK_THROWS_AS(mlp_forward(layer, V::Zero(2)), ShapeError);
  CHECK_THROWS_AS(mlp_backward(layer, V::Zero(3), V::Zero(1)), ShapeError);
}

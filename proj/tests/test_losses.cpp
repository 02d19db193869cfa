#include <doctest.h>

#include <random>

#include <Eigen/QR>

#include "oracles.hpp"
#include "roboka/losses.hpp"

using namespace roboka;
using M = Eigen::MatrixXd;
using V = Eigen::VectorXd;

namespace {

M random_mat(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

const ContrastiveConfig<double> kCfg{};

}  // namespace

TEST_CASE("cosine similarity") {
  V a(3), b(3);
  a << 1, 2, 3;
  b << 4, 5, 6;
  CHECK(cosine_sim<double>(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_sim<double>(a, b) == doctest::Approx(32.0 / (std::sqrt(14.0) * std::sqrt(77.0))).epsilon(1e-15));
  V e1 = V::Zero(4), e2 = V::Zero(4);
  e1[0] = 1;
  e2[2] = 1;
  CHECK(cosine_sim<double>(e1, e2) == 0.0);
  CHECK(cosine_sim<double>(V::Zero(3), a) == 0.0);
}

TEST_CASE("InfoNCE with a single pair is exactly zero") {
  std::mt19937_64 rng(1);
  const auto r = infonce(random_mat(1, 128, rng), random_mat(1, 128, rng), kCfg);
  CHECK(r.loss == 0.0);
  CHECK(r.grad_s.isZero(0.0));
}

TEST_CASE("InfoNCE on an orthonormal set matches the double loop") {
  std::mt19937_64 rng(2);
  const M q = Eigen::HouseholderQR<M>(random_mat(128, 4, rng)).householderQ() * M::Identity(128, 4);
  const M u = q.transpose();
  const double ref = oracle::infonce(u, u, 0.1);
  CHECK(std::abs(infonce(u, u, kCfg).loss - ref) < 1e-10);
  // exp(10) / (exp(10) + 3): the positive pair dominates
  CHECK(ref == doctest::Approx(-std::log(std::exp(10.0) / (std::exp(10.0) + 3.0))).epsilon(1e-12));
}

TEST_CASE("InfoNCE matches the double loop on random batches") {
  std::mt19937_64 rng(3);
  for (int n : {2, 5, 17}) {
    const M us = random_mat(n, 128, rng), ut = random_mat(n, 128, rng);
    for (double tau : {0.05, 0.1, 1.0}) {
      const auto r = infonce(us, ut, ContrastiveConfig<double>{tau});
      CHECK(std::abs(r.loss - oracle::infonce(us, ut, tau)) < 1e-10);
      CHECK(r.loss >= 0.0);
    }
  }
}

TEST_CASE("InfoNCE invariances") {
  std::mt19937_64 rng(4);
  const M us = random_mat(8, 16, rng), ut = random_mat(8, 16, rng);
  const double base = infonce(us, ut, kCfg).loss;
  CHECK(std::abs(infonce<double>(3.7 * us, ut, kCfg).loss - base) < 1e-10);
  CHECK(std::abs(infonce<double>(us, 0.01 * ut, kCfg).loss - base) < 1e-10);
  CHECK(std::abs(infonce(ut, us, kCfg).loss - base) < 1e-10);
}

TEST_CASE("InfoNCE gradients match finite differences") {
  std::mt19937_64 rng(5);
  M us = random_mat(5, 6, rng), ut = random_mat(5, 6, rng);
  const auto r = infonce(us, ut, kCfg);
  const double h = 1e-6;
  auto check = [&](M& m, const M& g) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + h;
      const double fp = infonce(us, ut, kCfg).loss;
      m.data()[i] = saved - h;
      const double fm = infonce(us, ut, kCfg).loss;
      m.data()[i] = saved;
      const double num = (fp - fm) / (2 * h);
      CHECK(std::abs(g.data()[i] - num) / std::max({std::abs(num), std::abs(g.data()[i]), 1e-6}) < 1e-5);
    }
  };
  check(us, r.grad_s);
  check(ut, r.grad_t);
}

TEST_CASE("InfoNCE errors") {
  CHECK_THROWS_AS(infonce(M(0, 4), M(0, 4), kCfg), InputError);
  const M two = M::Ones(2, 4), three = M::Ones(3, 4);
  CHECK_THROWS_AS(infonce(two, three, kCfg), ShapeError);
  CHECK_THROWS_AS(infonce(two, two, ContrastiveConfig<double>{0.0}), ConfigError);
}

TEST_CASE("BCE values") {
  CHECK(bce(0.0, 1).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const auto big = bce(40.0, 1);
  CHECK(std::isfinite(big.loss));
  CHECK(big.loss >= 0.0);
  CHECK(big.loss < 1e-17);
  const auto neg = bce(-40.0, 1);
  CHECK(neg.loss == doctest::Approx(40.0).epsilon(1e-15));
  CHECK(neg.grad_logit == doctest::Approx(-1.0));

  const double s = 1.0 / (1.0 + std::exp(-1.5));
  CHECK(bce(1.5, 0).loss == doctest::Approx(-std::log(1.0 - s)).epsilon(1e-14));
  CHECK(bce(1.5, 0).grad_logit == doctest::Approx(s).epsilon(1e-15));
  CHECK_THROWS_AS(bce(0.0, 2), InputError);
  CHECK_THROWS_AS(bce(std::nan(""), 1), InputError);
}

TEST_CASE("BCE is positive and decreasing in the logit for y = 1") {
  double prev = INFINITY;
  for (double z = -30; z <= 30; z += 0.25) {
    const double l = bce(z, 1).loss;
    CHECK(l > 0.0);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("combined loss") {
  const auto unit = combined_loss(0.8, 0.3, UncertaintyParams<double>{});
  CHECK(unit.loss == doctest::Approx(0.5 * 0.8 + 0.5 * 0.3).epsilon(1e-15));
  CHECK(unit.weight_c == 0.5);

  const auto zero_c = combined_loss(0.0, 0.3, UncertaintyParams<double>{0.0, 0.2});
  CHECK(zero_c.loss == doctest::Approx(zero_c.weight_bce * 0.3 + 0.2).epsilon(1e-15));

  const UncertaintyParams<double> p{0.3, -0.4};
  const auto r = combined_loss(0.7, 1.9, p);
  const double h = 1e-6;
  auto at = [](double lc, double lb) { return combined_loss(0.7, 1.9, UncertaintyParams<double>{lc, lb}).loss; };
  CHECK(r.grad_log_sigma_c == doctest::Approx((at(0.3 + h, -0.4) - at(0.3 - h, -0.4)) / (2 * h)).epsilon(1e-7));
  CHECK(r.grad_log_sigma_bce == doctest::Approx((at(0.3, -0.4 + h) - at(0.3, -0.4 - h)) / (2 * h)).epsilon(1e-7));
}

TEST_CASE("sigma is stationary at sigma^2 = l") {
  for (double l : {0.05, 0.7, 3.0}) {
    const double star = 0.5 * std::log(l);  // log sigma at sigma^2 = l
    const auto below = combined_loss(l, 1.0, UncertaintyParams<double>{star - 1e-3, 0.0});
    const auto at = combined_loss(l, 1.0, UncertaintyParams<double>{star, 0.0});
    const auto above = combined_loss(l, 1.0, UncertaintyParams<double>{star + 1e-3, 0.0});
    CHECK(below.grad_log_sigma_c < 0.0);
    CHECK(above.grad_log_sigma_c > 0.0);
    CHECK(std::abs(at.grad_log_sigma_c) < 1e-12);
    CHECK(at.loss < below.loss);
    CHECK(at.loss < above.loss);
  }
}

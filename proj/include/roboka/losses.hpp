#pragma once

// Training objectives: symmetric cosine-similarity InfoNCE, binary
// cross-entropy on a logit, and the uncertainty-weighted combination of the
// two.

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "roboka/errors.hpp"
#include "roboka/kan.hpp"

namespace roboka {

inline constexpr double kCosineEps = 1e-12;

template <typename Scalar>
struct ContrastiveConfig {
  Scalar tau = Scalar(0.1);
};

template <typename Scalar>
Scalar cosine_sim(const Eigen::Ref<const Vec<Scalar>>& a, const Eigen::Ref<const Vec<Scalar>>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim on vectors of different length");
  const Scalar denom = std::max(a.norm() * b.norm(), Scalar(kCosineEps));
  return a.dot(b) / denom;
}

template <typename Scalar>
struct InfoNceResult {
  Scalar loss = 0;
  Scalar loss_s_to_t = 0;
  Scalar loss_t_to_s = 0;
  Mat<Scalar> grad_s;  // dL/dU_s
  Mat<Scalar> grad_t;  // dL/dU_t
};

namespace detail {

// Row-normalize, remembering the norms used so the Jacobian can be applied.
template <typename Scalar>
Mat<Scalar> normalize_rows(const Mat<Scalar>& u, Vec<Scalar>& norms) {
  norms = u.rowwise().norm().cwiseMax(Scalar(kCosineEps));
  return norms.cwiseInverse().asDiagonal() * u;
}

// d(u/|u|)^T g  =  (g - u_hat (u_hat . g)) / |u|   (plain g/eps below the guard)
template <typename Scalar>
Mat<Scalar> normalize_rows_backward(const Mat<Scalar>& u, const Mat<Scalar>& unit,
                                    const Vec<Scalar>& norms, const Mat<Scalar>& g) {
  Mat<Scalar> out(g.rows(), g.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    if (u.row(i).norm() > Scalar(kCosineEps))
      out.row(i) = (g.row(i) - unit.row(i) * unit.row(i).dot(g.row(i))) / norms[i];
    else
      out.row(i) = g.row(i) / norms[i];
  }
  return out;
}

}  // namespace detail

// L_C = (L_{s->t} + L_{t->s}) / 2 over the N x N matrix of cosine
// similarities divided by tau; row i of U_s is paired with row i of U_t and
// every other row of the batch serves as a negative.
template <typename Scalar>
InfoNceResult<Scalar> infonce(const Mat<Scalar>& u_s, const Mat<Scalar>& u_t,
                              const ContrastiveConfig<Scalar>& cfg) {
  if (u_s.rows() == 0) throw InputError("InfoNCE needs at least one pair");
  if (u_s.rows() != u_t.rows() || u_s.cols() != u_t.cols())
    throw ShapeError("InfoNCE embedding matrices must have equal shape");
  if (!(cfg.tau > 0)) throw ConfigError("temperature must be positive");

  const Eigen::Index n = u_s.rows();
  Vec<Scalar> norm_s, norm_t;
  const Mat<Scalar> a = detail::normalize_rows(u_s, norm_s);
  const Mat<Scalar> b = detail::normalize_rows(u_t, norm_t);
  const Mat<Scalar> logits = (a * b.transpose()) / cfg.tau;

  // Softmax over rows (s->t) and columns (t->s), stabilized by the max.
  Mat<Scalar> p_row(n, n), p_col(n, n);
  Scalar sum_row = 0, sum_col = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mr = logits.row(i).maxCoeff();
    const auto er = (logits.row(i).array() - mr).exp();
    const Scalar zr = er.sum();
    p_row.row(i) = er / zr;
    sum_row += mr + std::log(zr) - logits(i, i);

    const Scalar mc = logits.col(i).maxCoeff();
    const auto ec = (logits.col(i).array() - mc).exp();
    const Scalar zc = ec.sum();
    p_col.col(i) = ec / zc;
    sum_col += mc + std::log(zc) - logits(i, i);
  }

  InfoNceResult<Scalar> r;
  r.loss_s_to_t = sum_row / Scalar(n);
  r.loss_t_to_s = sum_col / Scalar(n);
  r.loss = Scalar(0.5) * (r.loss_s_to_t + r.loss_t_to_s);

  const Mat<Scalar> eye = Mat<Scalar>::Identity(n, n);
  const Mat<Scalar> d_logits = (p_row - eye + p_col - eye) * (Scalar(0.5) / Scalar(n));
  const Mat<Scalar> d_a = d_logits * b / cfg.tau;
  const Mat<Scalar> d_b = d_logits.transpose() * a / cfg.tau;
  r.grad_s = detail::normalize_rows_backward(u_s, a, norm_s, d_a);
  r.grad_t = detail::normalize_rows_backward(u_t, b, norm_t, d_b);
  return r;
}

template <typename Scalar>
struct BceResult {
  Scalar loss = 0;
  Scalar grad_logit = 0;
};

// -[y log sigma(z) + (1-y) log(1 - sigma(z))], evaluated as
// max(z, 0) - z y + log1p(exp(-|z|)).
template <typename Scalar>
BceResult<Scalar> bce(Scalar logit, int label) {
  if (!std::isfinite(static_cast<double>(logit))) throw InputError("BCE on a non-finite logit");
  if (label != 0 && label != 1) throw InputError("BCE label must be 0 or 1");
  const Scalar y = Scalar(label);
  BceResult<Scalar> r;
  r.loss = std::max(logit, Scalar(0)) - logit * y + std::log1p(std::exp(-std::abs(logit)));
  r.grad_logit = sigmoid(logit) - y;
  return r;
}

// sigma = exp(log_sigma) for the contrastive and classification terms.
template <typename Scalar>
struct UncertaintyParams {
  Scalar log_sigma_c = 0;
  Scalar log_sigma_bce = 0;
};

template <typename Scalar>
struct CombinedLoss {
  Scalar loss = 0;
  Scalar grad_log_sigma_c = 0;
  Scalar grad_log_sigma_bce = 0;
  Scalar weight_c = 0;    // 1 / (2 sigma_C^2)
  Scalar weight_bce = 0;  // 1 / (2 sigma_BCE^2)
};

// L = l_c / (2 sigma_C^2) + l_bce / (2 sigma_BCE^2) + log sigma_C + log sigma_BCE
template <typename Scalar>
CombinedLoss<Scalar> combined_loss(Scalar l_c, Scalar l_bce, const UncertaintyParams<Scalar>& p) {
  CombinedLoss<Scalar> r;
  r.weight_c = Scalar(0.5) * std::exp(Scalar(-2) * p.log_sigma_c);
  r.weight_bce = Scalar(0.5) * std::exp(Scalar(-2) * p.log_sigma_bce);
  r.loss = r.weight_c * l_c + r.weight_bce * l_bce + p.log_sigma_c + p.log_sigma_bce;
  r.grad_log_sigma_c = Scalar(1) - Scalar(2) * r.weight_c * l_c;
  r.grad_log_sigma_bce = Scalar(1) - Scalar(2) * r.weight_bce * l_bce;
  return r;
}

}  // namespace roboka

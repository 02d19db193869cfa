#pragma once

// Dense layers: the spline-edge KAN layer and the affine+activation MLP layer.
//
// Both follow the same calling convention so the model can treat them
// uniformly:
//   forward(x)                      -> output
//   backward(x, upstream, grad)     -> dL/dx, accumulating parameter
//                                      gradients into `grad` (a layer of
//                                      identical shape)

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "roboka/errors.hpp"
#include "roboka/spline.hpp"

namespace roboka {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= 0) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar silu(Scalar z) {
  return z * sigmoid(z);
}

template <typename Scalar>
Scalar silu_deriv(Scalar z) {
  const Scalar s = sigmoid(z);
  return s * (Scalar(1) + z * (Scalar(1) - s));
}

// ---------------------------------------------------------------------------
// KAN layer

// output_j = sum_i phi_{j,i}(clamp(x_i)),  phi_{j,i}(x) = sum_m a_m^{(j,i)} B_m(x)
// plus sum_i base_{j,i} silu(x_i) when the residual base term is enabled.
//
// Coefficients are stored as a d_out x (d_in * M) matrix; column i*M + m
// holds a_m^{(., i)}.
template <typename Scalar>
class KanLayer {
 public:
  using Vector = Vec<Scalar>;
  using Matrix = Mat<Scalar>;

  KanLayer() = default;

  KanLayer(int d_in, int d_out, const GridConfig& grid, bool base = false)
      : grid_(grid),
        coeffs_(Matrix::Zero(d_out, static_cast<Eigen::Index>(d_in) * grid_.num_basis())) {
    if (d_in < 1 || d_out < 1) throw ShapeError("KAN layer dimensions must be positive");
    if (base) base_weight_ = Matrix::Zero(d_out, d_in);
  }

  int d_in() const { return static_cast<int>(coeffs_.cols() / grid_.num_basis()); }
  int d_out() const { return static_cast<int>(coeffs_.rows()); }
  int num_basis() const { return grid_.num_basis(); }
  bool has_base() const { return base_weight_.has_value(); }
  const SplineGrid<Scalar>& grid() const { return grid_; }

  Matrix& coeffs() { return coeffs_; }
  const Matrix& coeffs() const { return coeffs_; }
  Matrix& base_weight() { return *base_weight_; }
  const Matrix& base_weight() const { return *base_weight_; }

  // phi_{j,i} coefficient block, a_1..a_M.
  auto edge(int j, int i) { return coeffs_.row(j).segment(i * num_basis(), num_basis()); }
  auto edge(int j, int i) const {
    return coeffs_.row(j).segment(i * num_basis(), num_basis());
  }

  template <typename Gen>
  void init_random(Gen& rng) {
    std::normal_distribution<double> normal(0.0, 0.1 / std::sqrt(double(d_in())));
    for (Eigen::Index k = 0; k < coeffs_.size(); ++k) coeffs_.data()[k] = Scalar(normal(rng));
    if (base_weight_) {
      std::normal_distribution<double> bn(0.0, 1.0 / std::sqrt(double(d_in())));
      for (Eigen::Index k = 0; k < base_weight_->size(); ++k)
        base_weight_->data()[k] = Scalar(bn(rng));
    }
  }

  KanLayer zeros_like() const {
    KanLayer z = *this;
    z.coeffs_.setZero();
    if (z.base_weight_) z.base_weight_->setZero();
    return z;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    f(std::string(prefix) + ".coeffs", coeffs_);
    if (base_weight_) f(std::string(prefix) + ".base", *base_weight_);
  }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const {
    f(std::string(prefix) + ".coeffs", coeffs_);
    if (base_weight_) f(std::string(prefix) + ".base", *base_weight_);
  }

  Vector forward(const Eigen::Ref<const Vector>& x) const {
    check_input(x.size());
    const int m = num_basis();
    Vector out = Vector::Zero(d_out());
    for (int i = 0; i < d_in(); ++i) {
      const auto w = grid_.window(x[i]);
      const Eigen::Map<const Eigen::Matrix<Scalar, kSplineSupport, 1>> b(w.value.data());
      out.noalias() += coeffs_.middleCols(i * m + w.first, kSplineSupport) * b;
    }
    if (base_weight_) out.noalias() += *base_weight_ * x.unaryExpr([](Scalar v) { return silu(v); });
    return out;
  }

  // Returns dL/dx; dL/da_m^{(j,i)} = upstream_j * B_m(x_i) is added to grad.
  Vector backward(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& upstream,
                  KanLayer& grad) const {
    check_input(x.size());
    if (upstream.size() != d_out()) throw ShapeError("KAN upstream gradient has wrong length");
    const int m = num_basis();
    Vector grad_x(d_in());
    for (int i = 0; i < d_in(); ++i) {
      const auto w = grid_.window(x[i]);
      const Eigen::Map<const Eigen::Matrix<Scalar, 1, kSplineSupport>> b(w.value.data());
      const Eigen::Map<const Eigen::Matrix<Scalar, kSplineSupport, 1>> db(w.deriv.data());
      const auto block = coeffs_.middleCols(i * m + w.first, kSplineSupport);
      grad.coeffs_.middleCols(i * m + w.first, kSplineSupport).noalias() += upstream * b;
      grad_x[i] = w.clamped ? Scalar(0) : upstream.dot(block * db);
    }
    if (base_weight_) {
      const Vector act = x.unaryExpr([](Scalar v) { return silu(v); });
      grad.base_weight_->noalias() += upstream * act.transpose();
      grad_x.array() += (base_weight_->transpose() * upstream).array() *
                        x.unaryExpr([](Scalar v) { return silu_deriv(v); }).array();
    }
    return grad_x;
  }

 private:
  void check_input(Eigen::Index n) const {
    if (n != d_in())
      throw ShapeError("KAN layer expects input of length " + std::to_string(d_in()) +
                       ", got " + std::to_string(n));
  }

  SplineGrid<Scalar> grid_;
  Matrix coeffs_;
  std::optional<Matrix> base_weight_;
};

template <typename Scalar>
struct KanGradients {
  Mat<Scalar> coeffs;
  std::optional<Mat<Scalar>> base;
  Vec<Scalar> input;
};

template <typename Scalar, typename Derived>
Vec<Scalar> kan_forward(const KanLayer<Scalar>& layer, const Eigen::MatrixBase<Derived>& x) {
  return layer.forward(x.template cast<Scalar>());
}

template <typename Scalar, typename DerivedX, typename DerivedU>
KanGradients<Scalar> kan_backward(const KanLayer<Scalar>& layer,
                                  const Eigen::MatrixBase<DerivedX>& x,
                                  const Eigen::MatrixBase<DerivedU>& upstream) {
  KanLayer<Scalar> grad = layer.zeros_like();
  KanGradients<Scalar> out;
  out.input = layer.backward(x.template cast<Scalar>(), upstream.template cast<Scalar>(), grad);
  out.coeffs = grad.coeffs();
  if (grad.has_base()) out.base = grad.base_weight();
  return out;
}

// ---------------------------------------------------------------------------
// MLP layer: h = act(W x + b)

enum class Activation { relu, identity, sigmoid };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

template <typename Scalar>
class MlpLayer {
 public:
  using Vector = Vec<Scalar>;
  using Matrix = Mat<Scalar>;

  MlpLayer() = default;

  MlpLayer(int d_in, int d_out, Activation act)
      : weight_(Matrix::Zero(d_out, d_in)), bias_(Vector::Zero(d_out)), act_(act) {
    if (d_in < 1 || d_out < 1) throw ShapeError("MLP layer dimensions must be positive");
  }

  int d_in() const { return static_cast<int>(weight_.cols()); }
  int d_out() const { return static_cast<int>(weight_.rows()); }
  Activation activation() const { return act_; }

  Matrix& weight() { return weight_; }
  const Matrix& weight() const { return weight_; }
  Vector& bias() { return bias_; }
  const Vector& bias() const { return bias_; }

  template <typename Gen>
  void init_random(Gen& rng) {
    const double gain = act_ == Activation::relu ? 2.0 : 1.0;
    std::normal_distribution<double> normal(0.0, std::sqrt(gain / double(d_in())));
    for (Eigen::Index k = 0; k < weight_.size(); ++k) weight_.data()[k] = Scalar(normal(rng));
    bias_.setZero();
  }

  MlpLayer zeros_like() const {
    MlpLayer z = *this;
    z.weight_.setZero();
    z.bias_.setZero();
    return z;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    f(std::string(prefix) + ".weight", weight_);
    f(std::string(prefix) + ".bias", bias_);
  }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const {
    f(std::string(prefix) + ".weight", weight_);
    f(std::string(prefix) + ".bias", bias_);
  }

  Vector forward(const Eigen::Ref<const Vector>& x) const {
    check_input(x.size());
    Vector z = weight_ * x + bias_;
    switch (act_) {
      case Activation::relu: return z.cwiseMax(Scalar(0));
      case Activation::sigmoid: return z.unaryExpr([](Scalar v) { return sigmoid(v); });
      case Activation::identity: break;
    }
    return z;
  }

  Vector backward(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& upstream,
                  MlpLayer& grad) const {
    check_input(x.size());
    if (upstream.size() != d_out()) throw ShapeError("MLP upstream gradient has wrong length");
    Vector dz = upstream;
    if (act_ != Activation::identity) {
      const Vector z = weight_ * x + bias_;
      for (Eigen::Index j = 0; j < z.size(); ++j) {
        if (act_ == Activation::relu) {
          if (z[j] <= Scalar(0)) dz[j] = Scalar(0);
        } else {
          const Scalar s = sigmoid(z[j]);
          dz[j] *= s * (Scalar(1) - s);
        }
      }
    }
    grad.weight_.noalias() += dz * x.transpose();
    grad.bias_ += dz;
    return weight_.transpose() * dz;
  }

 private:
  void check_input(Eigen::Index n) const {
    if (n != d_in())
      throw ShapeError("MLP layer expects input of length " + std::to_string(d_in()) +
                       ", got " + std::to_string(n));
  }

  Matrix weight_;
  Vector bias_;
  Activation act_ = Activation::identity;
};

template <typename Scalar, typename Derived>
Vec<Scalar> mlp_forward(const MlpLayer<Scalar>& layer, const Eigen::MatrixBase<Derived>& x) {
  return layer.forward(x.template cast<Scalar>());
}

template <typename Scalar>
struct MlpGradients {
  Mat<Scalar> weight;
  Vec<Scalar> bias;
  Vec<Scalar> input;
};

template <typename Scalar, typename DerivedX, typename DerivedU>
MlpGradients<Scalar> mlp_backward(const MlpLayer<Scalar>& layer,
                                  const Eigen::MatrixBase<DerivedX>& x,
                                  const Eigen::MatrixBase<DerivedU>& upstream) {
  MlpLayer<Scalar> grad = layer.zeros_like();
  MlpGradients<Scalar> out;
  out.input = layer.backward(x.template cast<Scalar>(), upstream.template cast<Scalar>(), grad);
  out.weight = grad.weight();
  out.bias = grad.bias();
  return out;
}

}  // namespace roboka

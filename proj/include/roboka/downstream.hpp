#pragma once

// Convolutional head mapping a T x d embedding sequence to a fixed 128-dim
// feature vector:
//
//   conv1 (64 filters, k=3, valid) -> relu -> maxpool(2, stride 2)
//   conv2 (128 filters, k=3, valid) -> relu -> global max over time
//
// Sequences shorter than kMinSequenceLength are right-padded with zeros so
// that the time axis never becomes empty.

#include <random>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "roboka/errors.hpp"
#include "roboka/kan.hpp"

namespace roboka {

inline constexpr int kConvKernel = 3;
inline constexpr int kConv1Filters = 64;
inline constexpr int kConv2Filters = 128;
inline constexpr int kHeadOutput = kConv2Filters;
inline constexpr int kPoolWindow = 2;
// Smallest T for which conv(3) -> pool(2) -> conv(3) leaves >= 1 step.
inline constexpr int kMinSequenceLength = 8;

// Stacks k consecutive rows into one: row t of the result is
// [x(t), x(t+1), ..., x(t+k-1)].
template <typename Derived>
Mat<typename Derived::Scalar> unfold_time(const Eigen::MatrixBase<Derived>& x, int k) {
  const Eigen::Index steps = x.rows() - k + 1;
  const Eigen::Index d = x.cols();
  Mat<typename Derived::Scalar> out(steps, d * k);
  for (int o = 0; o < k; ++o) out.middleCols(o * d, d) = x.middleRows(o, steps);
  return out;
}

// Adjoint of unfold_time: scatter-add patch gradients back onto time steps.
template <typename Scalar>
Mat<Scalar> fold_time(const Mat<Scalar>& patches, int k, Eigen::Index d) {
  const Eigen::Index steps = patches.rows();
  Mat<Scalar> out = Mat<Scalar>::Zero(steps + k - 1, d);
  for (int o = 0; o < k; ++o) out.middleRows(o, steps) += patches.middleCols(o * d, d);
  return out;
}

template <typename Scalar>
class CnnHead {
 public:
  using Vector = Vec<Scalar>;
  using Matrix = Mat<Scalar>;

  // Intermediate activations kept from forward for backward.
  struct Cache {
    Eigen::Index input_rows = 0;  // T before padding
    Matrix patches1;              // T1 x 3d
    Matrix pre1;                  // T1 x 64
    Matrix pooled;                // P x 64
    Eigen::MatrixXi pool_src;     // P x 64, source row in pre1
    Matrix patches2;              // T2 x 192
    Matrix pre2;                  // T2 x 128
    Eigen::VectorXi time_argmax;  // 128
  };

  CnnHead() = default;

  explicit CnnHead(int d_emb)
      : w1_(Matrix::Zero(kConv1Filters, kConvKernel * d_emb)),
        b1_(Vector::Zero(kConv1Filters)),
        w2_(Matrix::Zero(kConv2Filters, kConvKernel * kConv1Filters)),
        b2_(Vector::Zero(kConv2Filters)) {
    if (d_emb < 1) throw ShapeError("CNN head needs a positive embedding dimension");
  }

  int d_emb() const { return static_cast<int>(w1_.cols() / kConvKernel); }

  // conv1 weight: 64 x (3 * d_emb), column k * d_emb + c is tap k, channel c.
  Matrix& conv1_weight() { return w1_; }
  const Matrix& conv1_weight() const { return w1_; }
  Vector& conv1_bias() { return b1_; }
  const Vector& conv1_bias() const { return b1_; }
  Matrix& conv2_weight() { return w2_; }
  const Matrix& conv2_weight() const { return w2_; }
  Vector& conv2_bias() { return b2_; }
  const Vector& conv2_bias() const { return b2_; }

  template <typename Gen>
  void init_random(Gen& rng) {
    auto fill = [&rng](Matrix& w) {
      std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / double(w.cols())));
      for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = Scalar(normal(rng));
    };
    fill(w1_);
    fill(w2_);
    b1_.setZero();
    b2_.setZero();
  }

  CnnHead zeros_like() const {
    CnnHead z = *this;
    z.w1_.setZero();
    z.b1_.setZero();
    z.w2_.setZero();
    z.b2_.setZero();
    return z;
  }

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    const std::string p(prefix);
    f(p + ".conv1.weight", w1_);
    f(p + ".conv1.bias", b1_);
    f(p + ".conv2.weight", w2_);
    f(p + ".conv2.bias", b2_);
  }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const {
    const std::string p(prefix);
    f(p + ".conv1.weight", w1_);
    f(p + ".conv1.bias", b1_);
    f(p + ".conv2.weight", w2_);
    f(p + ".conv2.bias", b2_);
  }

  template <typename Derived>
  Vector forward(const Eigen::MatrixBase<Derived>& h, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    if (h.rows() < 1) throw InputError("CNN head received an empty sequence");
    if (h.cols() != d_emb())
      throw ShapeError("CNN head expects " + std::to_string(d_emb()) + " channels, got " +
                       std::to_string(h.cols()));
    c.input_rows = h.rows();

    Matrix x = Matrix::Zero(std::max<Eigen::Index>(h.rows(), kMinSequenceLength), h.cols());
    x.topRows(h.rows()) = h.template cast<Scalar>();

    c.patches1 = unfold_time(x, kConvKernel);
    c.pre1.noalias() = c.patches1 * w1_.transpose();
    c.pre1.rowwise() += b1_.transpose();

    // relu then window-2 max pool; ties resolve to the earlier step
    const Eigen::Index pooled_len = c.pre1.rows() / kPoolWindow;
    c.pooled.resize(pooled_len, kConv1Filters);
    c.pool_src.resize(pooled_len, kConv1Filters);
    for (Eigen::Index f = 0; f < kConv1Filters; ++f) {
      for (Eigen::Index p = 0; p < pooled_len; ++p) {
        Eigen::Index best = p * kPoolWindow;
        Scalar best_v = std::max(c.pre1(best, f), Scalar(0));
        for (int o = 1; o < kPoolWindow; ++o) {
          const Scalar v = std::max(c.pre1(p * kPoolWindow + o, f), Scalar(0));
          if (v > best_v) {
            best_v = v;
            best = p * kPoolWindow + o;
          }
        }
        c.pooled(p, f) = best_v;
        c.pool_src(p, f) = static_cast<int>(best);
      }
    }

    c.patches2 = unfold_time(c.pooled, kConvKernel);
    c.pre2.noalias() = c.patches2 * w2_.transpose();
    c.pre2.rowwise() += b2_.transpose();

    Vector out(kConv2Filters);
    c.time_argmax.resize(kConv2Filters);
    for (Eigen::Index f = 0; f < kConv2Filters; ++f) {
      Eigen::Index best = 0;
      Scalar best_v = std::max(c.pre2(0, f), Scalar(0));
      for (Eigen::Index t = 1; t < c.pre2.rows(); ++t) {
        const Scalar v = std::max(c.pre2(t, f), Scalar(0));
        if (v > best_v) {
          best_v = v;
          best = t;
        }
      }
      out[f] = best_v;
      c.time_argmax[f] = static_cast<int>(best);
    }
    return out;
  }

  // Returns dL/dh (input_rows x d_emb); parameter gradients accumulate into grad.
  Matrix backward(const Cache& c, const Eigen::Ref<const Vector>& upstream, CnnHead& grad) const {
    if (upstream.size() != kHeadOutput) throw ShapeError("CNN head upstream must have length 128");

    Matrix d_pre2 = Matrix::Zero(c.pre2.rows(), kConv2Filters);
    for (Eigen::Index f = 0; f < kConv2Filters; ++f) {
      const int t = c.time_argmax[f];
      if (c.pre2(t, f) > Scalar(0)) d_pre2(t, f) = upstream[f];
    }
    grad.w2_.noalias() += d_pre2.transpose() * c.patches2;
    grad.b2_ += d_pre2.colwise().sum().transpose();
    const Matrix d_pooled = fold_time<Scalar>(d_pre2 * w2_, kConvKernel, kConv1Filters);

    Matrix d_pre1 = Matrix::Zero(c.pre1.rows(), kConv1Filters);
    for (Eigen::Index f = 0; f < kConv1Filters; ++f) {
      for (Eigen::Index p = 0; p < c.pooled.rows(); ++p) {
        const int src = c.pool_src(p, f);
        if (c.pre1(src, f) > Scalar(0)) d_pre1(src, f) += d_pooled(p, f);
      }
    }
    grad.w1_.noalias() += d_pre1.transpose() * c.patches1;
    grad.b1_ += d_pre1.colwise().sum().transpose();
    const Matrix d_x = fold_time<Scalar>(d_pre1 * w1_, kConvKernel, d_emb());
    return d_x.topRows(c.input_rows);
  }

 private:
  Matrix w1_;
  Vector b1_;
  Matrix w2_;
  Vector b2_;
};

template <typename Scalar, typename Derived>
Vec<Scalar> head_forward(const CnnHead<Scalar>& head, const Eigen::MatrixBase<Derived>& h) {
  return head.forward(h);
}

template <typename Scalar>
struct HeadGradients {
  CnnHead<Scalar> params;
  Mat<Scalar> input;
};

template <typename Scalar, typename Derived, typename DerivedU>
HeadGradients<Scalar> head_backward(const CnnHead<Scalar>& head,
                                    const Eigen::MatrixBase<Derived>& h,
                                    const Eigen::MatrixBase<DerivedU>& upstream) {
  typename CnnHead<Scalar>::Cache cache;
  head.forward(h, &cache);
  HeadGradients<Scalar> out{head.zeros_like(), {}};
  out.input = head.backward(cache, upstream.template cast<Scalar>(), out.params);
  return out;
}

}  // namespace roboka

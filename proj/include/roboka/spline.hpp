#pragma once

// Cubic B-spline basis on a uniform knot grid.
//
// A grid over [lo, hi] with G intervals carries G + 7 knots
//   t_k = lo + (k - 3) h,   k = 0 .. G + 6,   h = (hi - lo) / G
// i.e. three uniformly spaced exterior knots on each side, and M = G + 3
// basis functions. Inputs outside [lo, hi] are clamped to the nearest bound
// and have zero derivative.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "roboka/errors.hpp"

namespace roboka {

inline constexpr int kSplineDegree = 3;
inline constexpr int kSplineSupport = kSplineDegree + 1;

struct GridConfig {
  double lo = -2.0;
  double hi = 2.0;
  int intervals = 8;

  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

// The nonzero slice of the basis at one point: values and derivatives of
// B_first .. B_first+3.
template <typename Scalar>
struct BasisWindow {
  int first = 0;
  bool clamped = false;
  std::array<Scalar, kSplineSupport> value{};
  std::array<Scalar, kSplineSupport> deriv{};
};

template <typename Scalar>
class SplineGrid {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  SplineGrid() : SplineGrid(GridConfig{}) {}

  explicit SplineGrid(const GridConfig& cfg)
      : lo_(static_cast<Scalar>(cfg.lo)),
        hi_(static_cast<Scalar>(cfg.hi)),
        intervals_(cfg.intervals) {
    if (!(cfg.lo < cfg.hi) || !std::isfinite(cfg.lo) || !std::isfinite(cfg.hi))
      throw ConfigError("spline grid requires finite lo < hi");
    if (cfg.intervals < 1) throw ConfigError("spline grid requires at least one interval");
    step_ = (hi_ - lo_) / static_cast<Scalar>(intervals_);
    knots_.resize(static_cast<std::size_t>(intervals_ + 2 * kSplineDegree + 1));
    for (std::size_t k = 0; k < knots_.size(); ++k)
      knots_[k] = lo_ + (static_cast<Scalar>(k) - Scalar(kSplineDegree)) * step_;
    // Pin the interior endpoints so clamped inputs land exactly on a knot.
    knots_[kSplineDegree] = lo_;
    knots_[kSplineDegree + intervals_] = hi_;
  }

  Scalar lo() const { return lo_; }
  Scalar hi() const { return hi_; }
  Scalar step() const { return step_; }
  int intervals() const { return intervals_; }
  int num_basis() const { return intervals_ + kSplineDegree; }
  const std::vector<Scalar>& knots() const { return knots_; }
  GridConfig config() const {
    return {static_cast<double>(lo_), static_cast<double>(hi_), intervals_};
  }

  Scalar clamp(Scalar x) const { return std::clamp(x, lo_, hi_); }

  // Local Cox-de Boor evaluation (triangular scheme over the knot span).
  BasisWindow<Scalar> window(Scalar x) const {
    if (!std::isfinite(static_cast<double>(x)))
      throw InputError("spline basis evaluated at a non-finite point");
    BasisWindow<Scalar> w;
    w.clamped = x < lo_ || x > hi_;
    const Scalar xc = clamp(x);

    int span = kSplineDegree + static_cast<int>(std::floor((xc - lo_) / step_));
    span = std::clamp(span, kSplineDegree, kSplineDegree + intervals_ - 1);
    w.first = span - kSplineDegree;

    std::array<Scalar, kSplineSupport> left{}, right{};
    std::array<Scalar, kSplineSupport> n{};
    std::array<Scalar, kSplineDegree> quad{};  // degree-2 values, B_{span-2..span,2}
    n[0] = Scalar(1);
    for (int j = 1; j <= kSplineDegree; ++j) {
      left[j] = xc - knots_[span + 1 - j];
      right[j] = knots_[span + j] - xc;
      Scalar saved = 0;
      for (int r = 0; r < j; ++r) {
        const Scalar tmp = n[r] / (right[r + 1] + left[j - r]);
        n[r] = saved + right[r + 1] * tmp;
        saved = left[j - r] * tmp;
      }
      n[j] = saved;
      if (j == kSplineDegree - 1) std::copy_n(n.begin(), kSplineDegree, quad.begin());
    }
    w.value = n;

    if (!w.clamped) {
      // dB_{i,3}/dx = 3 B_{i,2} / (t_{i+3} - t_i) - 3 B_{i+1,2} / (t_{i+4} - t_{i+1})
      for (int a = 0; a < kSplineSupport; ++a) {
        const int i = w.first + a;
        const Scalar lower = a >= 1 ? quad[a - 1] : Scalar(0);
        const Scalar upper = a < kSplineDegree ? quad[a] : Scalar(0);
        w.deriv[a] = Scalar(kSplineDegree) * lower / (knots_[i + 3] - knots_[i]) -
                     Scalar(kSplineDegree) * upper / (knots_[i + 4] - knots_[i + 1]);
      }
    }
    return w;
  }

 private:
  Scalar lo_, hi_, step_{};
  int intervals_;
  std::vector<Scalar> knots_;
};

// Dense basis vector B_1(x) .. B_M(x).
template <typename Scalar>
typename SplineGrid<Scalar>::Vector basis_eval(const SplineGrid<Scalar>& grid, Scalar x) {
  const auto w = grid.window(x);
  typename SplineGrid<Scalar>::Vector out = SplineGrid<Scalar>::Vector::Zero(grid.num_basis());
  for (int a = 0; a < kSplineSupport; ++a) out[w.first + a] = w.value[a];
  return out;
}

// Dense derivative vector; identically zero where x was clamped.
template <typename Scalar>
typename SplineGrid<Scalar>::Vector basis_deriv(const SplineGrid<Scalar>& grid, Scalar x) {
  const auto w = grid.window(x);
  typename SplineGrid<Scalar>::Vector out = SplineGrid<Scalar>::Vector::Zero(grid.num_basis());
  for (int a = 0; a < kSplineSupport; ++a) out[w.first + a] = w.deriv[a];
  return out;
}

}  // namespace roboka

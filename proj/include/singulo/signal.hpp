#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "singulo/types.hpp"

namespace singulo {

/// Which one-sided limit to take at a discontinuity.
enum class Side { right, left };

/// Composite Simpson weights on `len` uniform samples with spacing dt.
/// An odd number of cells finishes with a 3/8 panel.
inline Eigen::RowVectorXd simpson_weights(Eigen::Index len, double dt) {
  Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(len);
  const Eigen::Index cells = len - 1;
  if (cells <= 0) return w;
  if (cells == 1) {
    w(0) = w(1) = dt / 2;
    return w;
  }
  Eigen::Index simpson_cells = (cells % 2 == 0) ? cells : cells - 3;
  for (Eigen::Index i = 0; i < simpson_cells; i += 2) {
    w(i) += dt / 3;
    w(i + 1) += 4 * dt / 3;
    w(i + 2) += dt / 3;
  }
  if (simpson_cells != cells) {
    const Eigen::Index i = simpson_cells;
    w(i) += 3 * dt / 8;
    w(i + 1) += 9 * dt / 8;
    w(i + 2) += 9 * dt / 8;
    w(i + 3) += 3 * dt / 8;
  }
  return w;
}

/// Uniformly sampled vector signal on [0, T]; column i is the value at i*T/(len-1).
/// At a jump node the stored value is the average of the one-sided limits.
struct SampledSignal {
  Mat values;
  double T = 1.0;

  SampledSignal() = default;
  SampledSignal(Mat v, double horizon) : values(std::move(v)), T(horizon) {}

  static SampledSignal zeros(Eigen::Index dim, Eigen::Index len, double horizon) {
    return {Mat::Zero(dim, len), horizon};
  }

  template <class Fn>
  static SampledSignal sample(Eigen::Index dim, Eigen::Index len, double horizon, Fn&& fn) {
    SampledSignal s = zeros(dim, len, horizon);
    for (Eigen::Index i = 0; i < len; ++i) s.values.col(i) = fn(s.time(i));
    return s;
  }

  Eigen::Index dim() const { return values.rows(); }
  Eigen::Index len() const { return values.cols(); }
  double dt() const { return T / static_cast<double>(len() - 1); }
  double time(Eigen::Index i) const {
    return i == len() - 1 ? T : static_cast<double>(i) * dt();
  }

  /// Piecewise-linear interpolation, clamped to [0, T].
  Vec at(double t) const {
    if (t <= 0) return values.col(0);
    if (t >= T) return values.col(len() - 1);
    const double s = t / dt();
    Eigen::Index i = std::min<Eigen::Index>(static_cast<Eigen::Index>(s), len() - 2);
    const double a = s - static_cast<double>(i);
    return (1 - a) * values.col(i) + a * values.col(i + 1);
  }

  SampledSignal operator+(const SampledSignal& o) const { return {values + o.values, T}; }
  SampledSignal operator-(const SampledSignal& o) const { return {values - o.values, T}; }
  SampledSignal operator*(double c) const { return {values * c, T}; }
};

/// Cumulative trapezoid primitive vanishing at t = 0.
inline SampledSignal primitive(const SampledSignal& s) {
  SampledSignal out = SampledSignal::zeros(s.dim(), s.len(), s.T);
  const double h = s.dt();
  for (Eigen::Index i = 1; i < s.len(); ++i)
    out.values.col(i) = out.values.col(i - 1) + 0.5 * h * (s.values.col(i - 1) + s.values.col(i));
  return out;
}

inline SampledSignal primitive(const SampledSignal& s, int p) {
  SampledSignal out = s;
  for (int j = 0; j < p; ++j) out = primitive(out);
  return out;
}

inline double integrate(const SampledSignal& s, Eigen::Index row = 0) {
  return simpson_weights(s.len(), s.dt()).dot(s.values.row(row));
}

inline double l2_norm_sq(const SampledSignal& s) {
  const Eigen::RowVectorXd sq = s.values.colwise().squaredNorm();
  return simpson_weights(s.len(), s.dt()).dot(sq);
}

inline double l2_norm(const SampledSignal& s) { return std::sqrt(l2_norm_sq(s)); }

/// H_{-p} norm: L2 norm of the p-th primitive.
inline double h_minus_norm(const SampledSignal& s, int p) { return l2_norm(primitive(s, p)); }

inline std::vector<double> uniform_nodes(double T, Eigen::Index cells) {
  std::vector<double> t(static_cast<std::size_t>(cells) + 1);
  for (Eigen::Index i = 0; i <= cells; ++i) t[static_cast<std::size_t>(i)] = T * static_cast<double>(i) / static_cast<double>(cells);
  t.back() = T;
  return t;
}

/// Control given cellwise by its right limit at the cell start, its midpoint
/// value and its left limit at the cell end. Jumps are allowed at nodes only.
struct CellControl {
  std::vector<double> nodes;
  Mat start, mid, end;  // dim x cells

  Eigen::Index dim() const { return start.rows(); }
  Eigen::Index cells() const { return start.cols(); }
  double h(Eigen::Index c) const {
    return nodes[static_cast<std::size_t>(c) + 1] - nodes[static_cast<std::size_t>(c)];
  }

  template <class Fn>  // fn(double t, Side side) -> Vec
  static CellControl from_function(std::vector<double> nodes, Eigen::Index dim, Fn&& fn) {
    CellControl c;
    const Eigen::Index n = static_cast<Eigen::Index>(nodes.size()) - 1;
    c.start.resize(dim, n);
    c.mid.resize(dim, n);
    c.end.resize(dim, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = nodes[static_cast<std::size_t>(i)], b = nodes[static_cast<std::size_t>(i) + 1];
      c.start.col(i) = fn(a, Side::right);
      c.mid.col(i) = fn(0.5 * (a + b), Side::right);
      c.end.col(i) = fn(b, Side::left);
    }
    c.nodes = std::move(nodes);
    return c;
  }

  /// Cellwise Simpson; exact for piecewise-linear controls.
  double l2_norm_sq() const {
    double acc = 0;
    for (Eigen::Index i = 0; i < cells(); ++i)
      acc += h(i) / 6 *
             (start.col(i).squaredNorm() + 4 * mid.col(i).squaredNorm() + end.col(i).squaredNorm());
    return acc;
  }

  /// Cellwise Simpson of a pointwise penalty rho(t, u).
  double integrate(const std::function<double(double, const Vec&)>& rho) const {
    double acc = 0;
    for (Eigen::Index i = 0; i < cells(); ++i) {
      const double a = nodes[static_cast<std::size_t>(i)], b = nodes[static_cast<std::size_t>(i) + 1];
      acc += (b - a) / 6 *
             (rho(a, start.col(i)) + 4 * rho(0.5 * (a + b), mid.col(i)) + rho(b, end.col(i)));
    }
    return acc;
  }

  /// Node samples; interior nodes get the average of the one-sided limits.
  /// Requires uniform nodes.
  SampledSignal to_sampled() const {
    const Eigen::Index n = cells();
    SampledSignal s = SampledSignal::zeros(dim(), n + 1, nodes.back());
    s.values.col(0) = start.col(0);
    for (Eigen::Index i = 1; i < n; ++i) s.values.col(i) = 0.5 * (end.col(i - 1) + start.col(i));
    s.values.col(n) = end.col(n - 1);
    return s;
  }
};

}  // namespace singulo

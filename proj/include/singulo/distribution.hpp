#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include "singulo/signal.hpp"
#include "singulo/types.hpp"

namespace singulo {

inline constexpr int kMaxDeltaOrder = 12;

/// 1/n! for n in [0, 2*kMaxDeltaOrder], built by repeated division.
inline double inv_factorial(int n) {
  static const auto table = [] {
    std::array<double, 2 * kMaxDeltaOrder + 1> t{};
    t[0] = 1;
    for (std::size_t i = 1; i < t.size(); ++i) t[i] = t[i - 1] / static_cast<double>(i);
    return t;
  }();
  if (n < 0) return 0;
  return table.at(static_cast<std::size_t>(n));
}

inline void check_orders(int m, int p) {
  if (m < 1 || p < m || p > kMaxDeltaOrder)
    throw Error(Errc::invalid_argument, "need 1 <= m <= p <= 12, got m=" + std::to_string(m) +
                                            " p=" + std::to_string(p));
}

/// Coefficients of the polynomial piece of the delta^{(m-1)} approximant in
/// H_{-p}: rows impose C^{p-1} contact with t^{p-m}/(p-m)! at t = eta.
/// The factorial moment matrix is too ill-conditioned for a floating-point
/// solve beyond p ~ 8, so elimination runs in exact rational arithmetic.
inline Vec solve_alpha(int m, int p) {
  check_orders(m, p);
  using boost::multiprecision::cpp_int;
  using boost::multiprecision::cpp_rational;
  std::vector<cpp_int> fact(static_cast<std::size_t>(2 * p + 1), cpp_int(1));
  for (std::size_t i = 1; i < fact.size(); ++i) fact[i] = fact[i - 1] * static_cast<long>(i);
  const auto P = static_cast<std::size_t>(p);
  std::vector<std::vector<cpp_rational>> M(P, std::vector<cpp_rational>(P + 1));
  for (std::size_t row = 0; row < P; ++row) {
    for (std::size_t i = 0; i < P; ++i) M[row][i] = cpp_rational(cpp_int(1), fact[P + i - row]);
    const int e = p - m - static_cast<int>(row);
    M[row][P] = e >= 0 ? cpp_rational(cpp_int(1), fact[static_cast<std::size_t>(e)]) : cpp_rational(0);
  }
  const auto exact = M;
  for (std::size_t c = 0; c < P; ++c) {
    std::size_t piv = c;
    while (piv < P && M[piv][c] == 0) ++piv;
    if (piv == P) throw Error(Errc::singular_matrix, "moment matrix is singular");
    std::swap(M[c], M[piv]);
    for (std::size_t r = 0; r < P; ++r) {
      if (r == c || M[r][c] == 0) continue;
      const cpp_rational f = M[r][c] / M[c][c];
      for (std::size_t j = c; j <= P; ++j) M[r][j] -= f * M[c][j];
    }
  }
  Vec alpha(p);
  for (std::size_t i = 0; i < P; ++i) alpha(static_cast<Eigen::Index>(i)) = static_cast<double>(M[i][P] / M[i][i]);
  // Residual of the rounded coefficients, relative to the size of the terms.
  double res = 0, scale = 0;
  for (std::size_t row = 0; row < P; ++row) {
    double acc = 0, mag = 0;
    for (std::size_t i = 0; i < P; ++i) {
      const double term = static_cast<double>(exact[row][i]) * alpha(static_cast<Eigen::Index>(i));
      acc += term;
      mag += std::abs(term);
    }
    res = std::max(res, std::abs(acc - static_cast<double>(exact[row][P])));
    scale = std::max(scale, mag);
  }
  if (res > 1e-10 * (1 + scale))
    throw Error(Errc::singular_matrix, "moment system residual " + std::to_string(res));
  return alpha;
}

/// Closed-form evaluator for psi_eta and u_eta = psi_eta^{(p)}.
struct DeltaKernel {
  int m = 1, p = 1;
  double eta = 1;
  Vec alpha;

  DeltaKernel() = default;
  DeltaKernel(int m_, int p_, double eta_) : m(m_), p(p_), eta(eta_), alpha(solve_alpha(m_, p_)) {}
  DeltaKernel(int m_, int p_, double eta_, Vec a) : m(m_), p(p_), eta(eta_), alpha(std::move(a)) {}

  /// u(t); on the junction t = eta the side selects the one-sided limit.
  double u(double t, Side side = Side::right) const {
    if (t < 0 || t > eta || (t == eta && side == Side::right)) return 0.0;
    if (t == 0 && side == Side::left) return 0.0;
    const double s = t / eta;
    double acc = 0, pw = 1;
    for (int i = 0; i < p; ++i) {
      acc += alpha(i) * pw * inv_factorial(i);
      pw *= s;
    }
    return acc / std::pow(eta, m);
  }

  /// d-th derivative of psi for d <= p.
  double psi(double t, int d = 0) const {
    if (t <= 0) return 0.0;
    if (t >= eta) {
      const int e = p - m - d;
      return e < 0 ? 0.0 : std::pow(t, e) * inv_factorial(e);
    }
    const double s = t / eta;
    double acc = 0;
    for (int i = 0; i < p; ++i) acc += alpha(i) * std::pow(s, p + i - d) * inv_factorial(p + i - d);
    return acc * std::pow(eta, p - m - d);
  }

  /// Exact comparator phi^p delta^{(m-1)} = t^{p-m}/(p-m)! for t > 0.
  double target(double t) const { return t <= 0 ? 0.0 : std::pow(t, p - m) * inv_factorial(p - m); }
};

struct DeltaApproximant {
  int m = 1, p = 1;
  double eta = 0;
  Vec alpha;
  SampledSignal u, psi;
  DeltaKernel kernel;
};

/// Samples the approximant on a uniform grid of `len` points over [0, T].
inline DeltaApproximant build_delta(int m, int p, double eta, double T, Eigen::Index len) {
  check_orders(m, p);
  if (!(eta > 0 && eta < T)) throw Error(Errc::invalid_argument, "need 0 < eta < T");
  const double dt = T / static_cast<double>(len - 1);
  if (eta / dt < 64 * (1 - 1e-12))
    throw Error(Errc::grid_too_coarse, "fewer than 64 samples inside [0, eta]");
  DeltaApproximant d;
  d.m = m;
  d.p = p;
  d.eta = eta;
  d.kernel = DeltaKernel(m, p, eta);
  d.alpha = d.kernel.alpha;
  d.u = SampledSignal::sample(1, len, T, [&](double t) {
    Vec v(1);
    // Average of one-sided limits so trapezoid primitives stay exact.
    v(0) = 0.5 * (d.kernel.u(t, Side::right) + d.kernel.u(t, Side::left));
    if (t == 0) v(0) = d.kernel.u(0, Side::right);
    return v;
  });
  d.psi = SampledSignal::sample(1, len, T, [&](double t) {
    Vec v(1);
    v(0) = d.kernel.psi(t);
    return v;
  });
  return d;
}

/// Grid length with at least `per_feature` cells inside the smallest feature.
inline Eigen::Index grid_length_for(double T, double feature, Eigen::Index per_feature = 64,
                                    Eigen::Index min_cells = 4096) {
  double cells = std::ceil(per_feature * T / feature - 1e-9);
  Eigen::Index c = min_cells;
  while (static_cast<double>(c) < cells) c *= 2;
  return c + 1;
}

// ---------------------------------------------------------------------------
// Log-log regression

struct LineFit {
  double slope = 0, intercept = 0, stderr_slope = 0, band_lo = 0, band_hi = 0;
  std::size_t n = 0;
};

/// Ordinary least squares y = a + b x with a two-sided 95% band on b.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  LineFit f;
  f.n = x.size();
  if (x.size() != y.size() || x.size() < 2) throw Error(Errc::invalid_argument, "need >= 2 points");
  const double N = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= N;
  my /= N;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0) throw Error(Errc::invalid_argument, "abscissae are all equal");
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (x.size() > 2) {
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = y[i] - f.intercept - f.slope * x[i];
      sse += e * e;
    }
    f.stderr_slope = std::sqrt(sse / (N - 2) / sxx);
    boost::math::students_t dist(N - 2);
    const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
    f.band_lo = f.slope - q * f.stderr_slope;
    f.band_hi = f.slope + q * f.stderr_slope;
  } else {
    f.band_lo = f.band_hi = f.slope;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Rate verification

struct RateRow {
  double eta, l2_norm, h_minus_err;
};

struct RateReport {
  int m = 1, p = 1;
  std::vector<RateRow> rows;
  double norm_slope = 0;   // d ln|u| / d ln(1/eta), expect (2m-1)/2
  double error_slope = 0;  // d ln err / d ln eta, expect (2(p-m)+1)/2
  double exponent = 0;     // d ln|u| / d ln(1/err), expect (2m-1)/(2(p-m)+1)
  double C1 = 0, C2 = 0;   // mean |u|^2 eta^{2m-1}, mean err^2 / eta^{2(p-m)+1}
  double C1_spread = 0;    // max relative deviation of |u|^2 eta^{2m-1} from its mean
};

inline double expected_norm_slope(int m) { return (2.0 * m - 1) / 2; }
inline double expected_error_slope(int m, int p) { return (2.0 * (p - m) + 1) / 2; }
inline double expected_exponent(int m, int p) { return (2.0 * m - 1) / (2.0 * (p - m) + 1); }

/// `per_feature` sets the number of grid cells inside the smallest eta.
inline RateReport verify_rates(int m, int p, const std::vector<double>& etas, double T,
                               Eigen::Index per_feature = 256) {
  if (etas.size() < 5) throw Error(Errc::invalid_argument, "need at least 5 eta values");
  double eta_min = etas.front();
  for (double e : etas) eta_min = std::min(eta_min, e);
  const Eigen::Index len = grid_length_for(T, eta_min, per_feature);
  RateReport rep;
  rep.m = m;
  rep.p = p;
  std::vector<double> lx, lnorm, lerr, linverr;
  for (double eta : etas) {
    const DeltaApproximant d = build_delta(m, p, eta, T, len);
    // psi is the closed-form p-th primitive of u; trapezoid primitives would
    // bury the O(eta^{p-m+1/2}) error under quadrature noise for small eta.
    SampledSignal diff = d.psi;
    for (Eigen::Index i = 0; i < diff.len(); ++i) diff.values(0, i) -= d.kernel.target(diff.time(i));
    RateRow row{eta, l2_norm(d.u), l2_norm(diff)};
    rep.rows.push_back(row);
    lx.push_back(std::log(eta));
    lnorm.push_back(std::log(row.l2_norm));
    lerr.push_back(std::log(row.h_minus_err));
    linverr.push_back(-std::log(row.h_minus_err));
  }
  std::vector<double> linv(lx.size());
  for (std::size_t i = 0; i < lx.size(); ++i) linv[i] = -lx[i];
  rep.norm_slope = fit_line(linv, lnorm).slope;
  rep.error_slope = fit_line(lx, lerr).slope;
  rep.exponent = fit_line(linverr, lnorm).slope;
  for (const auto& r : rep.rows) {
    rep.C1 += r.l2_norm * r.l2_norm * std::pow(r.eta, 2 * m - 1);
    rep.C2 += r.h_minus_err * r.h_minus_err / std::pow(r.eta, 2 * (p - m) + 1);
  }
  rep.C1 /= static_cast<double>(rep.rows.size());
  rep.C2 /= static_cast<double>(rep.rows.size());
  for (const auto& r : rep.rows)
    rep.C1_spread = std::max(rep.C1_spread, std::abs(r.l2_norm * r.l2_norm * std::pow(r.eta, 2 * m - 1) / rep.C1 - 1));
  return rep;
}

}  // namespace singulo

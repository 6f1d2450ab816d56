#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "singulo/estimator.hpp"
#include "singulo/integrate.hpp"
#include "singulo/signal.hpp"

namespace singulo {

enum class Flavor { general, constant_g, driftless };

/// x' = f(x) + G(x) u. Callables must be safe to call concurrently.
struct ControlAffineSystem {
  std::string name;
  Eigen::Index n = 0, k = 0;
  std::function<Vec(const Vec&)> f;
  std::function<Mat(const Vec&)> G;
  Flavor flavor = Flavor::general;
};

// ---------------------------------------------------------------------------
// Built-in systems

inline ControlAffineSystem scalar_integrator_system() {
  return {"scalar-integrator", 1, 1, [](const Vec&) { return Vec::Zero(1); },
          [](const Vec&) { return Mat::Ones(1, 1); }, Flavor::driftless};
}

inline ControlAffineSystem double_integrator_system() {
  return {"double-integrator", 2, 1,
          [](const Vec& x) {
            Vec d(2);
            d << x(1), 0;
            return d;
          },
          [](const Vec&) {
            Mat g(2, 1);
            g << 0, 1;
            return g;
          },
          Flavor::constant_g};
}

inline ControlAffineSystem driftless_flat_system(Eigen::Index n = 2) {
  return {"driftless-flat", n, n, [n](const Vec&) { return Vec::Zero(n); },
          [n](const Vec&) { return Mat::Identity(n, n); }, Flavor::driftless};
}

/// Quintic-smoothstep plateau: 1 on [-3/2, 3/2], 0 outside [-2, 2].
inline double plateau_bump(double s) {
  const double a = std::abs(s);
  if (a <= 1.5) return 1;
  if (a >= 2) return 0;
  const double w = (2 - a) / 0.5;
  return w * w * w * (10 - 15 * w + 6 * w * w);
}

/// x1' = u, x2' = x1, x3' = gamma(x1)(x1^2 - 1).
inline ControlAffineSystem example1_system() {
  return {"example1", 3, 1,
          [](const Vec& x) {
            Vec d(3);
            d << 0, x(0), plateau_bump(x(0)) * (x(0) * x(0) - 1);
            return d;
          },
          [](const Vec&) {
            Mat g(3, 1);
            g << 1, 0, 0;
            return g;
          },
          Flavor::constant_g};
}

/// Harmonic oscillator driven on the velocity: f(x) = (x2, -x1), G = (0, 1)'.
inline ControlAffineSystem oscillator_system() {
  return {"oscillator", 2, 1,
          [](const Vec& x) {
            Vec d(2);
            d << x(1), -x(0);
            return d;
          },
          [](const Vec&) {
            Mat g(2, 1);
            g << 0, 1;
            return g;
          },
          Flavor::constant_g};
}

inline ControlAffineSystem builtin_system(const std::string& name) {
  if (name == "scalar-integrator") return scalar_integrator_system();
  if (name == "double-integrator") return double_integrator_system();
  if (name == "driftless-flat") return driftless_flat_system();
  if (name == "example1") return example1_system();
  if (name == "oscillator") return oscillator_system();
  throw Error(Errc::invalid_argument, "unknown system '" + name + "'");
}

// ---------------------------------------------------------------------------
// Structural probes

/// max |G(x) - G(0)| over random probes in [-1, 1]^n.
inline double constant_g_defect(const ControlAffineSystem& sys, std::uint64_t seed = 0, int probes = 16) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1, 1);
  const Mat G0 = sys.G(Vec::Zero(sys.n));
  double worst = 0;
  for (int i = 0; i < probes; ++i) {
    Vec x(sys.n);
    for (Eigen::Index j = 0; j < sys.n; ++j) x(j) = U(rng);
    worst = std::max(worst, (sys.G(x) - G0).norm());
  }
  return worst;
}

/// Largest Lie bracket [g_i, g_j] = Dg_j g_i - Dg_i g_j over random probes,
/// with central differences of step 1e-5, relative to the field scale.
inline double bracket_defect(const ControlAffineSystem& sys, std::uint64_t seed = 0, int probes = 16,
                             double step = 1e-5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1, 1);
  double worst = 0;
  for (int p = 0; p < probes; ++p) {
    Vec x(sys.n);
    for (Eigen::Index j = 0; j < sys.n; ++j) x(j) = U(rng);
    const Mat G = sys.G(x);
    const double scale = 1 + G.norm();
    for (Eigen::Index i = 0; i < sys.k; ++i)
      for (Eigen::Index j = i + 1; j < sys.k; ++j) {
        auto dir = [&](Eigen::Index col, const Vec& d) -> Vec {
          return (sys.G(x + step * d).col(col) - sys.G(x - step * d).col(col)) / (2 * step);
        };
        const Vec br = dir(j, G.col(i)) - dir(i, G.col(j));
        worst = std::max(worst, br.norm() / scale);
      }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Integration

/// RK4 with the given cell control; cost is the integral of x'Px.
inline Trajectory integrate(const ControlAffineSystem& sys, const Mat& P, const CellControl& u, const Vec& x0) {
  if (u.dim() != sys.k || x0.size() != sys.n) throw Error(Errc::invalid_argument, "dimension mismatch");
  auto rhs = [&](Eigen::Index c, Stage s, double, const Vec& x) -> Vec {
    return sys.f(x) + sys.G(x) * stage_values(u, s).col(c);
  };
  auto cost = [&](Eigen::Index, Stage, double, const Vec& x) { return x.dot(P * x); };
  return integrate_cells(u.nodes, x0, rhs, cost);
}

/// Sampled control: cell midpoints use the average of the adjacent samples.
inline CellControl cells_from_samples(const SampledSignal& u) {
  CellControl c;
  const Eigen::Index n = u.len() - 1;
  c.nodes = uniform_nodes(u.T, n);
  c.start = u.values.leftCols(n);
  c.end = u.values.rightCols(n);
  c.mid = 0.5 * (c.start + c.end);
  return c;
}

inline Trajectory integrate(const ControlAffineSystem& sys, const Mat& P, const SampledSignal& u, const Vec& x0) {
  return integrate(sys, P, cells_from_samples(u), x0);
}

/// Reduced field y -> f(y + G v) for a constant input map G.
inline std::function<Vec(const Vec&)> goh_reduced_rhs(const ControlAffineSystem& sys, const Vec& v) {
  if (sys.flavor == Flavor::general || constant_g_defect(sys) > 1e-12)
    throw Error(Errc::flavor_mismatch, "Goh reduction needs a constant input map");
  const Mat G = sys.G(Vec::Zero(sys.n));
  auto f = sys.f;
  return [f, G, v](const Vec& y) -> Vec { return f(y + G * v); };
}

// ---------------------------------------------------------------------------
// Driftless boundary-layer family

struct DriftlessFamily {
  MinimizingFamily family;
  std::vector<int> n;
  std::vector<double> norm_sq, predicted_norm_sq;
};

/// u_n = n u0(n t) on [0, 1/n], 0 in between, n uT(1 - n(T - t)) on [T - 1/n, T].
inline DriftlessFamily driftless_family(const ControlAffineSystem& sys, const Mat& P, const Vec& x0, const Vec& xT,
                                        const Vec& xhat, double alpha, const SampledSignal& u0,
                                        const SampledSignal& uT, const std::vector<int>& n_grid, double T = 1,
                                        Eigen::Index middle_cells = 256) {
  if (sys.flavor != Flavor::driftless) throw Error(Errc::flavor_mismatch, "driftless system required");
  if (n_grid.empty()) throw Error(Errc::invalid_argument, "empty n grid");
  const double tol_endpoint = 1e-6 * (1 + xhat.norm() + xT.norm());
  const CellControl c0 = cells_from_samples(u0), cT = cells_from_samples(uT);
  if ((integrate(sys, P, c0, x0).final_state() - xhat).norm() > tol_endpoint)
    throw Error(Errc::steering_invalid, "u0 does not steer x0 to xhat");
  if ((integrate(sys, P, cT, xhat).final_state() - xT).norm() > tol_endpoint)
    throw Error(Errc::steering_invalid, "uT does not steer xhat to xT");

  DriftlessFamily out;
  out.family.inf_estimate = alpha * T;
  const double base = c0.l2_norm_sq() + cT.l2_norm_sq();
  for (int n : n_grid) {
    const double w = 1.0 / n;
    if (!(2 * w < T)) throw Error(Errc::invalid_argument, "boundary layers overlap");
    CellControl u;
    std::vector<Mat> st, md, en;
    for (Eigen::Index c = 0; c < c0.cells(); ++c) u.nodes.push_back(c0.nodes[static_cast<std::size_t>(c)] * w);
    for (Eigen::Index c = 0; c < middle_cells; ++c)
      u.nodes.push_back(w + (T - 2 * w) * static_cast<double>(c) / static_cast<double>(middle_cells));
    for (Eigen::Index c = 0; c <= cT.cells(); ++c)
      u.nodes.push_back(c == cT.cells() ? T : T - w + cT.nodes[static_cast<std::size_t>(c)] * w);
    const Eigen::Index cells = c0.cells() + middle_cells + cT.cells();
    u.start = Mat::Zero(sys.k, cells);
    u.mid = Mat::Zero(sys.k, cells);
    u.end = Mat::Zero(sys.k, cells);
    u.start.leftCols(c0.cells()) = n * c0.start;
    u.mid.leftCols(c0.cells()) = n * c0.mid;
    u.end.leftCols(c0.cells()) = n * c0.end;
    u.start.rightCols(cT.cells()) = n * cT.start;
    u.mid.rightCols(cT.cells()) = n * cT.mid;
    u.end.rightCols(cT.cells()) = n * cT.end;
    const Trajectory tr = integrate(sys, P, u, x0);
    FamilyEntry e;
    e.eta = w;
    e.cost = tr.cost;
    e.endpoint_gap = (tr.final_state() - xT).norm();
    e.l2norm = std::sqrt(u.l2_norm_sq());
    e.u = std::move(u);
    out.n.push_back(n);
    out.norm_sq.push_back(e.l2norm * e.l2norm);
    out.predicted_norm_sq.push_back(n * base);
    out.family.entries.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Example 1: oscillating family with overshooting ramps

/// Overshoot level c of the ramps; it makes the integral of x1^2 over every
/// ramp equal to the ramp length: 2c^2 + c - 5 = 0.
inline double example1_overshoot() { return (-1 + std::sqrt(41.0)) / 4; }

struct Example1Family {
  MinimizingFamily family;
  std::vector<int> N;
  std::vector<double> J, x2_end, x3_end;
};

/// Knots (t, x1) of the continuous sign pattern with ramps of half-width N^-3.
inline std::vector<std::pair<double, double>> example1_profile(int N) {
  const double h = std::pow(static_cast<double>(N), -3);
  const double c = example1_overshoot();
  std::vector<std::pair<double, double>> k;
  k.push_back({0, 0});
  k.push_back({h / 2, c});
  k.push_back({h, 1});
  for (int j = 1; j < 2 * N; ++j) {
    const double s = static_cast<double>(j) / (2.0 * N);
    const double a = (j % 2 == 1) ? 1.0 : -1.0;  // plateau value before s
    k.push_back({s - h, a});
    k.push_back({s - h / 2, a * c});
    k.push_back({s + h / 2, -a * c});
    k.push_back({s + h, -a});
  }
  k.push_back({1 - h, -1});
  k.push_back({1 - h / 2, -c});
  k.push_back({1, 0});
  return k;
}

inline Example1Family example1_family(const std::vector<int>& N_grid, int cells_per_segment = 32,
                                      int cells_per_plateau = 8) {
  if (N_grid.empty()) throw Error(Errc::invalid_argument, "empty N grid");
  if (2 * cells_per_segment < 64) throw Error(Errc::grid_too_coarse, "fewer than 64 cells per ramp");
  const ControlAffineSystem sys = example1_system();
  const Mat P = Mat::Identity(3, 3);
  Example1Family out;
  out.family.inf_estimate = 1;
  for (int N : N_grid) {
    if (N < 4) throw Error(Errc::invalid_argument, "N must be >= 4");
    const auto knots = example1_profile(N);
    CellControl u;
    std::vector<double> slopes;
    for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
      const auto [t0, y0] = knots[s];
      const auto [t1, y1] = knots[s + 1];
      const bool ramp = y0 != y1;
      const int m = ramp ? cells_per_segment : cells_per_plateau;
      for (int c = 0; c < m; ++c) {
        u.nodes.push_back(t0 + (t1 - t0) * c / m);
        slopes.push_back((y1 - y0) / (t1 - t0));
      }
    }
    u.nodes.push_back(1.0);
    const Eigen::Index cells = static_cast<Eigen::Index>(slopes.size());
    u.start = Eigen::Map<const Eigen::RowVectorXd>(slopes.data(), cells);
    u.mid = u.start;
    u.end = u.start;
    const Trajectory tr = integrate(sys, P, u, Vec::Zero(3));
    FamilyEntry e;
    e.eta = 1.0 / N;
    e.cost = tr.cost;
    e.endpoint_gap = tr.final_state().norm();
    e.l2norm = std::sqrt(u.l2_norm_sq());
    e.u = std::move(u);
    out.N.push_back(N);
    out.J.push_back(e.cost);
    out.x2_end.push_back(tr.final_state()(1));
    out.x3_end.push_back(tr.final_state()(2));
    out.family.entries.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relaxed controls, chattering and smoothing

/// Convex combination of atoms: p_j(t) >= 0, sum_j p_j = 1.
struct RelaxedControl {
  std::vector<SampledSignal> p;  // dim 1 each
  std::vector<SampledSignal> v;  // dim k each

  std::size_t atoms() const { return p.size(); }
  double T() const { return p.front().T; }

  void validate() const {
    if (p.empty() || p.size() != v.size()) throw Error(Errc::invalid_argument, "atom lists mismatch");
    const Eigen::Index len = p.front().len();
    for (Eigen::Index i = 0; i < len; ++i) {
      double s = 0;
      for (const auto& pj : p) {
        if (pj.values(0, i) < 0) throw Error(Errc::invalid_argument, "negative atom weight");
        s += pj.values(0, i);
      }
      if (std::abs(s - 1) > 1e-12) throw Error(Errc::invalid_argument, "atom weights do not sum to 1");
    }
  }
};

inline RelaxedControl constant_relaxed(const std::vector<double>& weights, const std::vector<Vec>& values, double T,
                                       Eigen::Index len = 2) {
  RelaxedControl rc;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    rc.p.push_back({Mat::Constant(1, len, weights[j]), T});
    rc.v.push_back({values[j].replicate(1, len), T});
  }
  return rc;
}

/// Field F(x, v) of a control system, possibly augmented with a cost state.
using ControlledField = std::function<Vec(const Vec&, const Vec&)>;

inline ControlledField field_of(const ControlAffineSystem& sys) {
  return [sys](const Vec& x, const Vec& u) -> Vec { return sys.f(x) + sys.G(x) * u; };
}

/// Piecewise-constant control: values.col(i) on [times[i], times[i+1]).
struct PiecewiseConstant {
  std::vector<double> times;
  Mat values;

  Eigen::Index pieces() const { return values.cols(); }
};

/// Continuous piecewise-linear control through (times[i], values.col(i)).
struct PiecewiseLinear {
  std::vector<double> times;
  Mat values;

  Vec at(double t) const {
    if (t <= times.front()) return values.col(0);
    if (t >= times.back()) return values.col(values.cols() - 1);
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const auto i = static_cast<Eigen::Index>(it - times.begin()) - 1;
    const double a = times[static_cast<std::size_t>(i)], b = times[static_cast<std::size_t>(i) + 1];
    if (b <= a) return values.col(i + 1);
    const double s = (t - a) / (b - a);
    return (1 - s) * values.col(i) + s * values.col(i + 1);
  }

  /// Exact |w'|^2 integral from the knots.
  double derivative_norm_sq() const {
    double acc = 0;
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
      const double h = times[i + 1] - times[i];
      if (h > 0) acc += (values.col(static_cast<Eigen::Index>(i) + 1) - values.col(static_cast<Eigen::Index>(i))).squaredNorm() / h;
    }
    return acc;
  }
};

namespace detail {

inline std::vector<double> merge_nodes(std::vector<double> a, const std::vector<double>& b, double T) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  std::vector<double> out;
  const double tiny = 1e-14 * std::max(1.0, T);
  for (double t : a) {
    if (t < 0 || t > T) continue;
    if (out.empty() || t - out.back() > tiny) out.push_back(t);
  }
  out.back() = T;
  out.front() = 0;
  return out;
}

/// Index of the piece containing the midpoint of [a, b].
inline Eigen::Index piece_at(const std::vector<double>& times, double a, double b) {
  const double m = 0.5 * (a + b);
  auto it = std::upper_bound(times.begin(), times.end(), m);
  return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(it - times.begin()) - 1, 0,
                                  static_cast<Eigen::Index>(times.size()) - 2);
}

}  // namespace detail

/// Integrates x' = F(x, v(t)) for a piecewise-constant v on nodes that include its switches.
inline Trajectory integrate_pwc(const ControlledField& F, const PiecewiseConstant& v, const Vec& x0,
                                const std::vector<double>& base_nodes) {
  const double T = v.times.back();
  const auto nodes = detail::merge_nodes(base_nodes, v.times, T);
  std::vector<Eigen::Index> piece(nodes.size() - 1);
  for (std::size_t c = 0; c + 1 < nodes.size(); ++c) piece[c] = detail::piece_at(v.times, nodes[c], nodes[c + 1]);
  auto rhs = [&](Eigen::Index c, Stage, double, const Vec& x) -> Vec {
    return F(x, v.values.col(piece[static_cast<std::size_t>(c)]));
  };
  return integrate_cells(nodes, x0, rhs, [](Eigen::Index, Stage, double, const Vec&) { return 0.0; });
}

/// Integrates x' = F(x, w(t)) for a continuous piecewise-linear w.
inline Trajectory integrate_pwl(const ControlledField& F, const PiecewiseLinear& w, const Vec& x0,
                                const std::vector<double>& base_nodes) {
  const double T = w.times.back();
  const auto nodes = detail::merge_nodes(base_nodes, w.times, T);
  auto rhs = [&](Eigen::Index, Stage, double t, const Vec& x) -> Vec { return F(x, w.at(t)); };
  return integrate_cells(nodes, x0, rhs, [](Eigen::Index, Stage, double, const Vec&) { return 0.0; });
}

/// Integrates the relaxed dynamics x' = sum_j p_j(t) F(x, v^j(t)).
inline Trajectory integrate_relaxed(const ControlledField& F, const RelaxedControl& rc, const Vec& x0,
                                    const std::vector<double>& nodes) {
  auto rhs = [&](Eigen::Index, Stage, double t, const Vec& x) -> Vec {
    Vec acc = Vec::Zero(x.size());
    for (std::size_t j = 0; j < rc.atoms(); ++j) acc += rc.p[j].at(t)(0) * F(x, rc.v[j].at(t));
    return acc;
  };
  return integrate_cells(nodes, x0, rhs, [](Eigen::Index, Stage, double, const Vec&) { return 0.0; });
}

/// Values of `tr` at the given nodes, which must all be trajectory nodes.
inline Mat states_at(const Trajectory& tr, const std::vector<double>& nodes) {
  Mat out(tr.X.rows(), static_cast<Eigen::Index>(nodes.size()));
  const double tiny = 1e-12 * std::max(1.0, tr.nodes.back());
  std::size_t k = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    while (k + 1 < tr.nodes.size() && tr.nodes[k] < nodes[i] - tiny) ++k;
    out.col(static_cast<Eigen::Index>(i)) = tr.X.col(static_cast<Eigen::Index>(k));
  }
  return out;
}

struct ChatteringResult {
  PiecewiseConstant control;
  Trajectory relaxed, chattering;
  double sup_error = 0;  // over the base nodes
};

/// Splits [0,T] into N slices and gives atom j a sub-interval of relative
/// length equal to its slice-averaged weight, atoms in index order, values
/// frozen at the slice start.
inline PiecewiseConstant chattering_control(const RelaxedControl& rc, int N) {
  rc.validate();
  const double T = rc.T();
  const Eigen::Index k = rc.v.front().dim();
  PiecewiseConstant out;
  std::vector<Vec> vals;
  out.times.push_back(0);
  for (int i = 0; i < N; ++i) {
    const double a = T * i / N, b = T * (i + 1) / N;
    std::vector<double> pbar(rc.atoms());
    double total = 0;
    for (std::size_t j = 0; j < rc.atoms(); ++j) {
      const int q = 64;
      double acc = 0;
      for (int s = 0; s <= q; ++s) {
        const double w = (s == 0 || s == q) ? 0.5 : 1.0;
        acc += w * rc.p[j].at(a + (b - a) * s / q)(0);
      }
      pbar[j] = acc / q;
      total += pbar[j];
    }
    double t = a;
    for (std::size_t j = 0; j < rc.atoms(); ++j) {
      const double len = (b - a) * pbar[j] / total;
      if (len <= 0) continue;
      t += len;
      out.times.push_back(j + 1 == rc.atoms() ? b : std::min(t, b));
      vals.push_back(rc.v[j].at(a));
    }
    out.times.back() = b;
  }
  out.values.resize(k, static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) out.values.col(static_cast<Eigen::Index>(i)) = vals[i];
  return out;
}

inline ChatteringResult chattering_approx(const ControlledField& F, const RelaxedControl& rc, int N, const Vec& x0,
                                          Eigen::Index base_cells = 4096) {
  ChatteringResult res;
  const double T = rc.T();
  const auto base = uniform_nodes(T, base_cells);
  res.control = chattering_control(rc, N);
  res.relaxed = integrate_relaxed(F, rc, x0, base);
  res.chattering = integrate_pwc(F, res.control, x0, base);
  const Mat Xc = states_at(res.chattering, base);
  res.sup_error = (Xc - res.relaxed.X).cwiseAbs().maxCoeff();
  return res;
}

/// Inserts ramps of width eps at the retained switch times, starting from 0
/// at t = 0. Switches closer than eps to the previous retained one are
/// skipped.
inline PiecewiseLinear smooth_pwc(const PiecewiseConstant& v, double eps) {
  const double T = v.times.back();
  const Eigen::Index k = v.values.rows();
  std::vector<double> t;
  std::vector<Vec> y;
  Vec level = Vec::Zero(k);
  t.push_back(0);
  y.push_back(level);
  double tau = 0;
  Eigen::Index piece = 0;  // piece starting at the retained switch
  while (true) {
    const Vec target = v.values.col(piece);
    const double end = std::min(tau + eps, T);
    const double frac = (end - tau) / eps;
    level = level + frac * (target - level);
    if (end > t.back()) {
      t.push_back(end);
      y.push_back(level);
    }
    // Next retained switch: first t_i >= tau + eps.
    Eigen::Index next = -1;
    for (Eigen::Index i = piece + 1; i < v.pieces(); ++i)
      if (v.times[static_cast<std::size_t>(i)] >= tau + eps) {
        next = i;
        break;
      }
    if (next < 0 || v.times[static_cast<std::size_t>(next)] >= T) break;
    tau = v.times[static_cast<std::size_t>(next)];
    piece = next;
    if (tau > t.back()) {
      t.push_back(tau);
      y.push_back(level);
    }
  }
  if (t.back() < T) {
    t.push_back(T);
    y.push_back(level);
  }
  PiecewiseLinear w;
  w.times = t;
  w.values.resize(k, static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) w.values.col(static_cast<Eigen::Index>(i)) = y[i];
  return w;
}

/// Sum of squared jumps (including the initial jump from 0) divided by eps.
inline double ramp_energy_law(const PiecewiseConstant& v, double eps) {
  double acc = v.values.col(0).squaredNorm();
  for (Eigen::Index i = 1; i < v.pieces(); ++i) acc += (v.values.col(i) - v.values.col(i - 1)).squaredNorm();
  return acc / eps;
}

/// Replaces w on [T - width, T] by a linear ramp to `target`.
inline PiecewiseLinear terminal_ramp(const PiecewiseLinear& w, double width, const Vec& target) {
  const double T = w.times.back(), a = T - width;
  PiecewiseLinear out;
  std::vector<Vec> y;
  for (std::size_t i = 0; i < w.times.size(); ++i) {
    if (w.times[i] >= a) break;
    out.times.push_back(w.times[i]);
    y.push_back(w.values.col(static_cast<Eigen::Index>(i)));
  }
  out.times.push_back(a);
  y.push_back(w.at(a));
  out.times.push_back(T);
  y.push_back(target);
  out.values.resize(w.values.rows(), static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) out.values.col(static_cast<Eigen::Index>(i)) = y[i];
  return out;
}

/// Derivative of a piecewise-linear control as a piecewise-constant one.
inline PiecewiseConstant derivative(const PiecewiseLinear& w) {
  PiecewiseConstant d;
  std::vector<Vec> vals;
  d.times.push_back(w.times.front());
  for (std::size_t i = 0; i + 1 < w.times.size(); ++i) {
    const double h = w.times[i + 1] - w.times[i];
    if (h <= 0) continue;
    vals.push_back((w.values.col(static_cast<Eigen::Index>(i) + 1) - w.values.col(static_cast<Eigen::Index>(i))) / h);
    d.times.push_back(w.times[i + 1]);
  }
  d.values.resize(w.values.rows(), static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) d.values.col(static_cast<Eigen::Index>(i)) = vals[i];
  return d;
}

struct P5Report {
  double eps = 0;
  int N = 0;
  PiecewiseLinear v_eps;
  double cost_relaxed = 0, cost_eps = 0, cost_original = 0;
  double cost_gap = 0;        // |J_r(v_eps) - J_r(relaxed)|
  double y_sup_gap = 0;       // sup |y_{v_eps} - y_relaxed| on the base nodes
  double endpoint_gap = 0;    // |x_u(T) - (y_relaxed(T) + G V_T)|
  double deriv_norm_sq = 0;   // |u|^2 with u = d v_eps / dt
  double goh_cost_gap = 0;    // |J(u) - J_r(v_eps)|
  double atom_bound = 0;      // max |v^j| over atoms
};

/// Chattering, smoothing with ramps of width eps^2 and a terminal ramp of
/// width eps to the fiber coordinate V_T, for a constant-G system.
inline P5Report p5_pipeline(const ControlAffineSystem& sys, const Mat& P, const RelaxedControl& rc, double eps,
                            const Vec& x0, const Vec& V_T, Eigen::Index base_cells = 4096) {
  if (sys.flavor == Flavor::general || constant_g_defect(sys) > 1e-12)
    throw Error(Errc::flavor_mismatch, "pipeline needs a constant input map");
  rc.validate();
  if (rc.v.front().dim() != sys.k || V_T.size() != sys.k || x0.size() != sys.n)
    throw Error(Errc::invalid_argument, "dimension mismatch");
  const Mat G = sys.G(Vec::Zero(sys.n));
  const Eigen::Index n = sys.n;
  auto f = sys.f;
  // Augmented reduced field on z = (J, y).
  ControlledField F = [f, G, P, n](const Vec& z, const Vec& v) -> Vec {
    const Vec w = z.tail(n) + G * v;
    Vec d(n + 1);
    d(0) = w.dot(P * w);
    d.tail(n) = f(w);
    return d;
  };
  P5Report rep;
  rep.eps = eps;
  rep.N = static_cast<int>(std::ceil(1.0 / eps - 1e-12));
  for (const auto& v : rc.v) rep.atom_bound = std::max(rep.atom_bound, v.values.cwiseAbs().maxCoeff());
  const double T = rc.T();
  const auto base = uniform_nodes(T, base_cells);
  Vec z0(n + 1);
  z0 << 0, x0;

  const Trajectory relaxed = integrate_relaxed(F, rc, z0, base);
  const PiecewiseConstant vN = chattering_control(rc, rep.N);
  rep.v_eps = terminal_ramp(smooth_pwc(vN, eps * eps), eps, V_T);

  const Trajectory reduced = integrate_pwl(F, rep.v_eps, z0, base);
  const Mat Zr = states_at(reduced, base);
  rep.cost_relaxed = relaxed.final_state()(0);
  rep.cost_eps = reduced.final_state()(0);
  rep.cost_gap = std::abs(rep.cost_eps - rep.cost_relaxed);
  rep.y_sup_gap = (Zr.bottomRows(n) - relaxed.X.bottomRows(n)).cwiseAbs().maxCoeff();

  const PiecewiseConstant u = derivative(rep.v_eps);
  rep.deriv_norm_sq = rep.v_eps.derivative_norm_sq();
  Trajectory orig;
  {
    const auto nodes = detail::merge_nodes(base, u.times, T);
    std::vector<Eigen::Index> piece(nodes.size() - 1);
    for (std::size_t c = 0; c + 1 < nodes.size(); ++c) piece[c] = detail::piece_at(u.times, nodes[c], nodes[c + 1]);
    auto rhs = [&](Eigen::Index c, Stage, double, const Vec& x) -> Vec {
      return sys.f(x) + G * u.values.col(piece[static_cast<std::size_t>(c)]);
    };
    auto cost = [&](Eigen::Index, Stage, double, const Vec& x) { return x.dot(P * x); };
    orig = integrate_cells(nodes, x0, rhs, cost);
  }
  rep.cost_original = orig.cost;
  rep.goh_cost_gap = std::abs(orig.cost - rep.cost_eps);
  rep.endpoint_gap = (orig.final_state() - (relaxed.final_state().tail(n) + G * V_T)).norm();
  return rep;
}

// ---------------------------------------------------------------------------
// Relaxation deviation

using TimeField = std::function<Vec(double, const Vec&)>;

/// sup_t | int_0^t (F - F0)(s, x_ref(s)) ds | by cumulative trapezoid on the reference nodes.
inline double relaxation_deviation(const TimeField& F0, const TimeField& F, const Trajectory& ref) {
  Vec acc = Vec::Zero(ref.X.rows());
  double worst = 0;
  Vec prev = F(ref.nodes[0], ref.X.col(0)) - F0(ref.nodes[0], ref.X.col(0));
  for (std::size_t i = 1; i < ref.nodes.size(); ++i) {
    const Vec x = ref.X.col(static_cast<Eigen::Index>(i));
    const Vec cur = F(ref.nodes[i], x) - F0(ref.nodes[i], x);
    acc += 0.5 * (ref.nodes[i] - ref.nodes[i - 1]) * (prev + cur);
    worst = std::max(worst, acc.norm());
    prev = cur;
  }
  return worst;
}

/// RK4 for a time-dependent field on the given nodes.
inline Trajectory integrate_field(const TimeField& F, const Vec& x0, const std::vector<double>& nodes) {
  auto rhs = [&](Eigen::Index, Stage, double t, const Vec& x) -> Vec { return F(t, x); };
  return integrate_cells(nodes, x0, rhs, [](Eigen::Index, Stage, double, const Vec&) { return 0.0; });
}

}  // namespace singulo

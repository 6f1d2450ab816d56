#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <thread>
#include <vector>

#include "singulo/distribution.hpp"
#include "singulo/generalized.hpp"
#include "singulo/integrate.hpp"
#include "singulo/reduced_lq.hpp"

namespace singulo {

struct FamilyEntry {
  double eta = 0;
  CellControl u;  // original control coordinates
  double cost = 0;
  double endpoint_gap = 0;
  double l2norm = 0;
};

struct MinimizingFamily {
  std::vector<FamilyEntry> entries;
  double inf_estimate = 0;
  double inf_residual = 0;  // extrapolation residual, 0 when supplied in closed form

  double gap(const FamilyEntry& e) const { return e.cost - inf_estimate + e.endpoint_gap; }
};

struct FamilyOptions {
  Eigen::Index cells_per_eta = 64;
  Eigen::Index min_cells = 4096;
  unsigned jobs = 1;
  std::optional<double> inf_estimate;  // closed-form infimum when known
};

/// Runs fn(i) for i in [0, count) on up to `jobs` threads.
template <class Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(count)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (unsigned w = 0; w < jobs; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace detail {

/// Cumulative trapezoid of node samples where right/left limits may differ.
inline Mat primitive_two_sided(const Mat& right, const Mat& left, double h) {
  Mat out = Mat::Zero(right.rows(), right.cols());
  for (Eigen::Index i = 1; i < right.cols(); ++i)
    out.col(i) = out.col(i - 1) + 0.5 * h * (right.col(i - 1) + left.col(i));
  return out;
}

}  // namespace detail

/// Replaces every impulse of the generalized control by the H_{-j}
/// approximant of matching order, integrates the original dynamics and
/// records cost, endpoint gap and L2 norm for each eta.
inline MinimizingFamily build_minimizing_family(const LQProblem& problem, const DesingChain& chain,
                                                const ReducedSolution& sol, const GeneralizedControl& gc,
                                                const std::vector<double>& etas,
                                                const FamilyOptions& opt = {}) {
  if (sol.infinite) throw Error(Errc::invalid_argument, "families are built for finite horizons");
  if (etas.empty()) throw Error(Errc::invalid_argument, "empty eta grid");
  const double T = sol.T();
  const int r = chain.r;
  const Eigen::Index k = chain.k;
  double eta_min = T;
  for (double e : etas) {
    if (!(e > 0 && e <= T / 2)) throw Error(Errc::invalid_argument, "eta must lie in ]0, T/2]");
    eta_min = std::min(eta_min, e);
  }
  const Eigen::Index cells = grid_length_for(T, eta_min, opt.cells_per_eta, opt.min_cells) - 1;
  const Eigen::Index H = 2 * cells + 1;
  const double hh = T / static_cast<double>(2 * cells);
  auto half_time = [&](Eigen::Index i) { return i == H - 1 ? T : static_cast<double>(i) * hh; };

  // j-th derivative of v_j on the half grid, shared by every eta.
  const Mat Z = detail::sample_linear(sol.generator, sol.z0, T, H);
  Mat drive = Mat::Zero(k, H);
  {
    Mat CH = sol.output_map;
    for (int j = 0; j <= r; ++j) {
      if (chain.group_size(j))
        drive.middleRows(chain.group_offset(j), chain.group_size(j)) =
            (CH * Z).middleRows(chain.group_offset(j), chain.group_size(j));
      CH = CH * sol.generator;
    }
  }

  MinimizingFamily fam;
  fam.entries.resize(etas.size());
  parallel_for(etas.size(), opt.jobs, [&](std::size_t e) {
    // Snap eta to a cell boundary so the approximant jumps only at nodes.
    const double eta = std::max(1.0, std::round(etas[e] / (2 * hh))) * 2 * hh;
    Mat Ur = drive, Ul = drive;
    std::map<BlockIndex, Mat> prims;  // (l, d) -> phi^d u_l on the half grid
    std::function<const Mat&(int, int)> prim = [&](int l, int d) -> const Mat& {
      auto it = prims.find({l, d});
      if (it != prims.end()) return it->second;
      const Eigen::Index o = chain.group_offset(l), kl = chain.group_size(l);
      Mat cur = d == 1 ? detail::primitive_two_sided(Ur.middleRows(o, kl), Ul.middleRows(o, kl), hh)
                       : detail::primitive_two_sided(prim(l, d - 1), prim(l, d - 1), hh);
      return prims.emplace(BlockIndex{l, d}, std::move(cur)).first->second;
    };
    for (int j = r; j >= 0; --j) {
      const Eigen::Index o = chain.group_offset(j), kj = chain.group_size(j);
      if (kj == 0) continue;
      for (int i = 0; i < j; ++i) {
        auto s0 = gc.drive_start.find({i, j});
        auto sT = gc.drive_end.find({i, j});
        if (s0 == gc.drive_start.end()) continue;
        const DeltaKernel K(i + 1, j, eta);
        const double sign = (i % 2 == 0) ? 1.0 : -1.0;
        const auto last = static_cast<Eigen::Index>(std::ceil(eta / hh)) + 1;
        for (Eigen::Index t = 0; t <= std::min(last, H - 1); ++t) {
          const double tt = half_time(t);
          Ur.col(t).segment(o, kj) += K.u(tt, Side::right) * s0->second;
          Ul.col(t).segment(o, kj) += K.u(tt, Side::left) * s0->second;
        }
        if (sT == gc.drive_end.end()) continue;
        for (Eigen::Index t = std::max<Eigen::Index>(0, H - 1 - last); t < H; ++t) {
          const double tt = T - half_time(t);
          Ur.col(t).segment(o, kj) += sign * K.u(tt, Side::left) * sT->second;
          Ul.col(t).segment(o, kj) += sign * K.u(tt, Side::right) * sT->second;
        }
      }
      for (int a = j; a < r; ++a)
        for (int l = a + 1; l <= r; ++l) {
          auto it = chain.gamma_coeffs.find({j, a, l});
          if (it == chain.gamma_coeffs.end()) continue;
          const Mat c = it->second * prim(l, a - j + 1);
          Ur.middleRows(o, kj) -= c;
          Ul.middleRows(o, kj) -= c;
        }
    }
    FamilyEntry fe;
    fe.eta = eta;
    fe.u.nodes = uniform_nodes(T, cells);
    fe.u.start.resize(k, cells);
    fe.u.mid.resize(k, cells);
    fe.u.end.resize(k, cells);
    for (Eigen::Index c = 0; c < cells; ++c) {
      fe.u.start.col(c) = Ur.col(2 * c);
      fe.u.mid.col(c) = Ur.col(2 * c + 1);
      fe.u.end.col(c) = Ul.col(2 * c + 2);
    }
    fe.u.start = gc.basis * fe.u.start;
    fe.u.mid = gc.basis * fe.u.mid;
    fe.u.end = gc.basis * fe.u.end;
    const Trajectory tr = simulate_lq(problem, fe.u);
    fe.cost = tr.cost;
    fe.endpoint_gap = problem.xT ? (tr.final_state() - *problem.xT).norm() : 0.0;
    fe.l2norm = std::sqrt(fe.u.l2_norm_sq());
    fam.entries[e] = std::move(fe);
  });

  if (opt.inf_estimate) {
    fam.inf_estimate = *opt.inf_estimate;
  } else {
    std::vector<double> es, cs;
    for (const auto& fe : fam.entries) {
      es.push_back(fe.eta);
      cs.push_back(fe.cost);
    }
    const auto est = extrapolate_limit(es, cs);
    fam.inf_estimate = est.estimate;
    fam.inf_residual = est.residual;
  }
  return fam;
}

// ---------------------------------------------------------------------------
// Fitted degree of singularity

/// Slope of ln|u| against ln(1/eps) with eps = cost - inf + endpoint gap.
/// With 8 or more points the two largest gaps are dropped.
inline SigmaReport fit_sigma(const std::vector<double>& gaps, const std::vector<double>& norms) {
  if (gaps.size() != norms.size() || gaps.size() < 5)
    throw Error(Errc::invalid_argument, "need at least 5 family entries");
  std::vector<std::size_t> idx(gaps.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
    if (!(gaps[i] > 0)) throw Error(Errc::degenerate_gaps, "non-positive optimality gap");
  }
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return gaps[a] > gaps[b]; });
  if (idx.size() >= 8) idx.erase(idx.begin(), idx.begin() + 2);
  std::vector<double> x, y;
  double gmax = 0, gmin = std::numeric_limits<double>::infinity();
  for (auto i : idx) {
    x.push_back(-std::log(gaps[i]));
    y.push_back(std::log(norms[i]));
    gmax = std::max(gmax, gaps[i]);
    gmin = std::min(gmin, gaps[i]);
  }
  if (std::log10(gmax / gmin) < 2) throw Error(Errc::degenerate_gaps, "gaps span fewer than 2 decades");
  const LineFit f = fit_line(x, y);
  SigmaReport rep;
  rep.method = SigmaMethod::fitted;
  rep.sigma = f.slope;
  rep.intercept = f.intercept;
  rep.stderr_slope = f.stderr_slope;
  rep.band_lo = f.band_lo;
  rep.band_hi = f.band_hi;
  rep.points_used = f.n;
  return rep;
}

inline SigmaReport fit_sigma(const MinimizingFamily& fam) {
  std::vector<double> g, n;
  for (const auto& e : fam.entries) {
    g.push_back(fam.gap(e));
    n.push_back(e.l2norm);
  }
  return fit_sigma(g, n);
}

/// Decades spanned by the gaps actually used in the fit.
inline double fitted_gap_decades(const MinimizingFamily& fam) {
  std::vector<double> g;
  for (const auto& e : fam.entries) g.push_back(fam.gap(e));
  std::sort(g.begin(), g.end(), std::greater<>());
  if (g.size() >= 8) g.erase(g.begin(), g.begin() + 2);
  return std::log10(g.front() / g.back());
}

// ---------------------------------------------------------------------------
// Penalized problems

/// Nonnegative pointwise penalty rho(t, u).
struct PenaltySpec {
  double exponent = 2;  // power law |u|^exponent when `custom` is empty
  std::function<double(double, const Vec&)> custom;

  static PenaltySpec power_law(double e) {
    if (e < 1) throw Error(Errc::invalid_argument, "penalty exponent must be >= 1");
    return {e, {}};
  }
  double operator()(double t, const Vec& u) const {
    return custom ? custom(t, u) : std::pow(u.norm(), exponent);
  }
};

inline double penalty_integral(const CellControl& u, const PenaltySpec& rho) {
  return u.integrate([&](double t, const Vec& v) { return rho(t, v); });
}

struct ScheduleRow {
  int m = 0;
  double eta = 0, eps = 0, nu = 0, cost = 0, J_eps = 0;
  bool bound_ok = true;
};

/// For each m picks the coarsest entry with cost <= inf + 1/m, then sets
/// eps_m = 1/(m nu_m) and checks J_eps <= inf + 2/m + tol.
inline std::vector<ScheduleRow> epsilon_schedule(const MinimizingFamily& fam, const PenaltySpec& rho, int m_max,
                                                 double tol = 1e-6) {
  std::vector<std::size_t> order(fam.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return fam.entries[a].eta > fam.entries[b].eta; });
  std::vector<double> nu(fam.entries.size(), -1);
  std::vector<ScheduleRow> rows;
  for (int m = 1; m <= m_max; ++m) {
    const double target = fam.inf_estimate + 1.0 / m;
    std::optional<std::size_t> pick;
    for (auto i : order)
      if (fam.entries[i].cost <= target) {
        pick = i;
        break;
      }
    if (!pick) throw Error(Errc::invalid_argument, "no family entry within 1/" + std::to_string(m) + " of the infimum");
    const auto& e = fam.entries[*pick];
    if (nu[*pick] < 0) nu[*pick] = penalty_integral(e.u, rho);
    ScheduleRow row;
    row.m = m;
    row.eta = e.eta;
    row.nu = nu[*pick];
    row.eps = row.nu > 0 ? 1.0 / (m * row.nu) : 1.0 / m;
    row.cost = e.cost;
    row.J_eps = e.cost + row.eps * row.nu;
    row.bound_ok = row.J_eps - fam.inf_estimate <= 2.0 / m + tol;
    rows.push_back(row);
    if (!row.bound_ok)
      throw Error(Errc::schedule_violated, "m=" + std::to_string(m) + " exceeds inf + 2/m");
  }
  return rows;
}

struct SweepRow {
  double eps = 0, envelope = 0, argmin_eta = 0;
};

/// Lower envelope min_k cost_k + eps * nu_k over the family for each eps.
inline std::vector<SweepRow> regularization_sweep(const MinimizingFamily& fam, const PenaltySpec& rho,
                                                  const std::vector<double>& eps_grid) {
  std::vector<double> nu;
  for (const auto& e : fam.entries) nu.push_back(penalty_integral(e.u, rho));
  std::vector<SweepRow> out;
  for (double eps : eps_grid) {
    SweepRow row{eps, std::numeric_limits<double>::infinity(), 0};
    for (std::size_t i = 0; i < nu.size(); ++i) {
      const double J = fam.entries[i].cost + eps * nu[i];
      if (J < row.envelope) {
        row.envelope = J;
        row.argmin_eta = fam.entries[i].eta;
      }
    }
    out.push_back(row);
  }
  return out;
}

}  // namespace singulo

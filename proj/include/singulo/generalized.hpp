#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "singulo/desingularization.hpp"
#include "singulo/reduced_lq.hpp"

namespace singulo {

/// Primitives phi^s u_j of the generalized optimal control at one instant of
/// ]0,T[, recovered from derivatives of v*. Keyed by (j, s).
using PrimitiveValues = std::map<BlockIndex, Vec>;

/// vd holds v^{(d)}(t) in column d, d = 0..r.
inline PrimitiveValues primitive_values(const DesingChain& chain, const Mat& vd) {
  PrimitiveValues F;
  const int r = chain.r;
  auto block = [&](int j, int d) -> Vec {
    return vd.col(d).segment(chain.group_offset(j), chain.group_size(j));
  };
  // Groups are processed from the top so every referenced F(l, .) exists.
  for (int j = r; j >= 0; --j) {
    if (chain.group_size(j) == 0) continue;
    for (int s = 0; s <= j; ++s) {
      Vec val = block(j, j - s);
      for (int a = j; a < r; ++a)
        for (int l = a + 1; l <= r; ++l) {
          auto it = chain.gamma_coeffs.find({j, a, l});
          if (it == chain.gamma_coeffs.end()) continue;
          val -= it->second * F.at({l, a + 1 - j + s});
        }
      F[{j, s}] = val;
    }
  }
  return F;
}

/// Trajectory value x^r(t) + sum B_{i,j} phi^{i+1}u_j(t) inside ]0,T[.
inline Vec interior_state(const DesingChain& chain, const Vec& xr, const PrimitiveValues& F) {
  Vec x = xr;
  for (const auto& [i, j] : chain.jump_labels) x += chain.B.at({i, j}) * F.at({j, i + 1});
  return x;
}

struct JumpDecomposition {
  std::map<BlockIndex, Vec> alpha, beta;
  Vec jump0, jumpT;
  double residual = 0;
  double tol_zero = 0;
  bool infinite = false;
};

inline double zero_tolerance(const Vec& x0, const std::optional<Vec>& xT, const Tolerances& tol = {}) {
  return tol.zero_scale * (x0.norm() + (xT ? xT->norm() : 0.0) + 1);
}

namespace detail {

inline Vec expand_in_basis(const DesingChain& chain, const Vec& jump, double tol_jump, double* residual) {
  const Mat& J = chain.jump_basis;
  if (J.cols() == 0) {
    *residual = jump.norm();
    if (*residual > tol_jump) throw Error(Errc::residual_too_large, "jump outside an empty basis");
    return Vec::Zero(0);
  }
  if (linalg::rank(J, 1e-9) < J.cols())
    throw Error(Errc::rank_deficient_basis, "jump basis columns are linearly dependent");
  const Vec c = J.colPivHouseholderQr().solve(jump);
  *residual = std::max(*residual, (J * c - jump).norm());
  if (*residual > tol_jump)
    throw Error(Errc::residual_too_large, "jump leaves the span of the jump basis (residual " +
                                              std::to_string(*residual) + ")");
  return c;
}

inline std::map<BlockIndex, Vec> split_by_label(const DesingChain& chain, const Vec& c) {
  std::map<BlockIndex, Vec> out;
  for (std::size_t b = 0; b < chain.jump_labels.size(); ++b) {
    const auto [i, j] = chain.jump_labels[b];
    out[{i, j}] = c.segment(chain.jump_block_cols[b], chain.group_size(j));
  }
  return out;
}

}  // namespace detail

inline JumpDecomposition decompose_boundary(const DesingChain& chain, const ReducedSolution& sol,
                                            const Vec& x0, const std::optional<Vec>& xT,
                                            const Tolerances& tol = {}) {
  JumpDecomposition d;
  d.infinite = sol.infinite;
  d.tol_zero = zero_tolerance(x0, xT, tol);
  const double tol_jump = tol.jump_scale * (1 + x0.norm() + (xT ? xT->norm() : 0.0));
  const Eigen::Index n = chain.n;

  const auto F0 = primitive_values(chain, sol.control_derivatives(0.0, chain.r));
  d.jump0 = interior_state(chain, x0, F0) - x0;
  const Vec a = detail::expand_in_basis(chain, d.jump0, tol_jump, &d.residual);
  d.alpha = detail::split_by_label(chain, a);

  if (sol.infinite) {
    d.jumpT = Vec::Zero(n);
    return d;
  }
  const double T = sol.T();
  const Vec zT = sol.state_at(T);
  const auto FT = primitive_values(chain, sol.control_derivatives(T, chain.r));
  const Vec xTm = interior_state(chain, zT.head(n), FT);
  d.jumpT = xT ? Vec(*xT - xTm) : Vec::Zero(n);
  const Vec b = detail::expand_in_basis(chain, d.jumpT, tol_jump, &d.residual);
  d.beta = detail::split_by_label(chain, b);
  return d;
}

// ---------------------------------------------------------------------------
// Degree of singularity

enum class HorizonMode { finite, infinite };
enum class SigmaMethod { exact_formula, fitted };

struct SigmaReport {
  double sigma = 0;  // may be -infinity
  std::vector<BlockIndex> contributors;
  HorizonMode mode = HorizonMode::finite;
  SigmaMethod method = SigmaMethod::exact_formula;
  std::vector<std::string> warnings;
  // Fitted reports only.
  double stderr_slope = 0, band_lo = 0, band_hi = 0, intercept = 0;
  std::size_t points_used = 0;
};

inline double sigma_value(int i, int j) { return (i + 0.5) / (2.0 * (j - i) - 1.0); }

namespace detail {

inline SigmaReport sigma_from_sets(const std::vector<const std::map<BlockIndex, Vec>*>& sets, double tol_zero,
                                   bool control_zero, HorizonMode mode) {
  SigmaReport rep;
  rep.mode = mode;
  if (control_zero) {
    rep.sigma = -std::numeric_limits<double>::infinity();
    return rep;
  }
  std::map<BlockIndex, double> mag;
  for (const auto* s : sets)
    for (const auto& [ij, v] : *s) mag[ij] = std::max(mag[ij], v.size() ? v.cwiseAbs().maxCoeff() : 0.0);
  double best = 0;
  bool any = false;
  for (const auto& [ij, m] : mag) {
    if (m > tol_zero / 10 && m < tol_zero * 10)
      rep.warnings.push_back("coefficient (" + std::to_string(ij.first) + "," + std::to_string(ij.second) +
                             ") within 10x of the zero threshold");
    if (m <= tol_zero) continue;
    const double s = sigma_value(ij.first, ij.second);
    if (!any || s > best + 1e-12) {
      best = s;
      rep.contributors.clear();
    }
    if (!any || std::abs(s - best) <= 1e-12) rep.contributors.push_back(ij);
    any = true;
  }
  rep.sigma = any ? best : 0.0;
  return rep;
}

}  // namespace detail

inline SigmaReport sigma_exact(const JumpDecomposition& d, bool control_zero) {
  return detail::sigma_from_sets({&d.alpha, &d.beta}, d.tol_zero, control_zero, HorizonMode::finite);
}

inline SigmaReport sigma_exact_infinite(const JumpDecomposition& d, bool control_zero) {
  return detail::sigma_from_sets({&d.alpha}, d.tol_zero, control_zero, HorizonMode::infinite);
}

/// True when v* and every jump coefficient vanish up to tol_zero.
inline bool is_zero_control(const ReducedSolution& sol, const JumpDecomposition& d) {
  if (sol.v_star.values.size() && sol.v_star.values.cwiseAbs().maxCoeff() > d.tol_zero) return false;
  for (const auto* s : {&d.alpha, &d.beta})
    for (const auto& [ij, v] : *s)
      if (v.size() && v.cwiseAbs().maxCoeff() > d.tol_zero) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Generalized optimal control

/// Analytic part plus impulses at 0 and T, in chain control coordinates.
/// The drive data describe the same control through the j-th derivatives of
/// the components of v*, which is what the approximating families use.
struct GeneralizedControl {
  SampledSignal analytic;
  std::map<BlockIndex, Vec> impulses_start, impulses_end;  // (i,j): coefficient of delta^{(i)} on group j
  std::map<BlockIndex, Vec> drive_start, drive_end;        // (i,j): V^0_{i,j}, V^T_{i,j}
  Mat basis;                                               // original control = basis * chain control
  int r = 0;
};

inline GeneralizedControl synthesize(const DesingChain& chain, const ReducedSolution& sol,
                                     const JumpDecomposition& d) {
  GeneralizedControl gc;
  gc.r = chain.r;
  gc.basis = chain.basis;
  gc.impulses_start = d.alpha;
  gc.impulses_end = d.beta;
  const int r = chain.r;
  const Eigen::Index len = sol.x_r.len();
  const double T = sol.T();
  gc.analytic = SampledSignal::zeros(chain.k, len, T);
  const Mat Z = detail::sample_linear(sol.generator, sol.z0, T, len);
  std::vector<Mat> CH{sol.output_map};
  for (int dd = 1; dd <= r; ++dd) CH.push_back(CH.back() * sol.generator);
  Mat vd(chain.k, r + 1);
  for (Eigen::Index t = 0; t < len; ++t) {
    for (int dd = 0; dd <= r; ++dd) vd.col(dd) = CH[static_cast<std::size_t>(dd)] * Z.col(t);
    const auto F = primitive_values(chain, vd);
    for (int j = 0; j <= r; ++j)
      if (chain.group_size(j)) gc.analytic.values.col(t).segment(chain.group_offset(j), chain.group_size(j)) = F.at({j, 0});
  }

  const Mat vd0 = sol.control_derivatives(0.0, r);
  for (const auto& [i, j] : chain.jump_labels)
    gc.drive_start[{i, j}] = vd0.col(j - i - 1).segment(chain.group_offset(j), chain.group_size(j));
  for (const auto& [i, j] : chain.jump_labels) {
    Vec V = d.beta.count({i, j}) ? d.beta.at({i, j}) : Vec::Zero(chain.group_size(j));
    for (int a = j; a < r; ++a)
      for (int l = a + 1; l <= r; ++l) {
        auto it = chain.gamma_coeffs.find({j, a, l});
        auto bt = d.beta.find({a - j + i + 1, l});
        if (it == chain.gamma_coeffs.end() || bt == d.beta.end()) continue;
        V += it->second * bt->second;
      }
    gc.drive_end[{i, j}] = V;
  }
  return gc;
}

// ---------------------------------------------------------------------------
// Strata

struct StratumReport {
  std::vector<std::pair<double, std::vector<BlockIndex>>> value_set;  // ascending values
  std::vector<BlockIndex> occupied;  // labels with nonzero alpha or beta
  double sigma = 0;
  Eigen::Index classical_dim = 0;
  Eigen::Index ambient_dim = 0;
  bool generic = false;  // alpha or beta at (r-1, r) nonzero
};

inline std::vector<std::pair<double, std::vector<BlockIndex>>> sigma_value_set(int r) {
  std::map<double, std::vector<BlockIndex>> vals;
  for (int i = 0; i < r; ++i)
    for (int j = i + 1; j <= r; ++j) vals[sigma_value(i, j)].push_back({i, j});
  return {vals.begin(), vals.end()};
}

inline StratumReport stratum_report(const DesingChain& chain, const JumpDecomposition& d, bool control_zero = false) {
  StratumReport s;
  s.value_set = sigma_value_set(chain.r);
  s.classical_dim = chain.stratum_dim();
  s.ambient_dim = 2 * chain.n;
  for (const auto& ij : chain.jump_labels) {
    double m = 0;
    if (d.alpha.count(ij)) m = std::max(m, d.alpha.at(ij).cwiseAbs().maxCoeff());
    if (d.beta.count(ij)) m = std::max(m, d.beta.at(ij).cwiseAbs().maxCoeff());
    if (m > d.tol_zero) s.occupied.push_back(ij);
    if (m > d.tol_zero && ij == BlockIndex{chain.r - 1, chain.r}) s.generic = true;
  }
  s.sigma = (d.infinite ? sigma_exact_infinite(d, control_zero) : sigma_exact(d, control_zero)).sigma;
  return s;
}

namespace detail {
inline nlohmann::json extended_real(double x) {
  if (std::isinf(x)) return x < 0 ? "-inf" : "inf";
  return x;
}
inline nlohmann::json labels_json(const std::vector<BlockIndex>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& [i, j] : v) a.push_back({i, j});
  return a;
}
inline nlohmann::json coeffs_json(const std::map<BlockIndex, Vec>& m) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& [ij, v] : m) a.push_back({{"i", ij.first}, {"j", ij.second}, {"value", std::vector<double>(v.data(), v.data() + v.size())}});
  return a;
}
}  // namespace detail

inline nlohmann::json sigma_report_json(const SigmaReport& rep, const StratumReport& st, const JumpDecomposition& d) {
  nlohmann::json j;
  j["sigma"] = detail::extended_real(rep.sigma);
  j["method"] = rep.method == SigmaMethod::exact_formula ? "exact-formula" : "fitted";
  j["mode"] = rep.mode == HorizonMode::finite ? "finite-horizon" : "infinite-horizon";
  j["contributors"] = detail::labels_json(rep.contributors);
  nlohmann::json vs = nlohmann::json::array();
  for (const auto& [v, labels] : st.value_set) vs.push_back({{"value", v}, {"pairs", detail::labels_json(labels)}});
  j["value_set"] = vs;
  j["stratum_dim"] = st.classical_dim;
  j["occupied"] = detail::labels_json(st.occupied);
  j["generic"] = st.generic;
  j["residuals"] = {{"jump", d.residual}, {"tol_zero", d.tol_zero}};
  j["alpha"] = detail::coeffs_json(d.alpha);
  j["beta"] = detail::coeffs_json(d.beta);
  j["warnings"] = rep.warnings;
  if (rep.method == SigmaMethod::fitted) {
    j["stderr"] = rep.stderr_slope;
    j["band"] = {rep.band_lo, rep.band_hi};
    j["points_used"] = rep.points_used;
  }
  return j;
}

}  // namespace singulo

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "singulo/desingularization.hpp"
#include "singulo/integrate.hpp"
#include "singulo/linalg.hpp"
#include "singulo/signal.hpp"

namespace singulo {

/// Regular LQ problem left after desingularization, in chain control coordinates.
struct ReducedLQ {
  Mat A, Br, P, Qr, Rr;
  Mat endpoint_subspace;  // n x (#columns); empty columns = fixed endpoint
  std::optional<double> T;
  Vec x0;
  std::optional<Vec> xT;  // empty: free endpoint

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index k() const { return Br.cols(); }
};

inline ReducedLQ make_reduced(const DesingChain& chain, const LQProblem& p) {
  ReducedLQ red;
  red.A = p.A;
  red.P = p.P;
  red.Br = chain.Br;
  red.Qr = chain.Qr;
  red.Rr = chain.Rr;
  red.endpoint_subspace = chain.jump_basis;
  red.T = p.T;
  red.x0 = p.x0;
  red.xT = p.xT;
  return red;
}

/// Optimal reduced control and trajectory. The solution is generated by a
/// linear system z' = M z, v = C z, x = first n entries of z, which gives
/// exact time derivatives of v.
struct ReducedSolution {
  SampledSignal v_star, x_r, lambda;
  double cost_reduced = 0;
  Vec endpoint_shift;  // x(T) - xT in the endpoint subspace basis
  bool infinite = false;
  double condition = 1;
  Mat generator, output_map;
  Vec z0;
  Mat feedback;  // K, infinite horizon only
  Mat riccati;   // Pi, infinite horizon only

  double T() const { return v_star.T; }
  Eigen::Index n() const { return x_r.dim(); }

  Vec state_at(double t) const { return linalg::expm(generator * t) * z0; }

  /// d-th derivative of v* at t (one-sided limits at 0 and T coincide with the
  /// analytic continuation).
  Vec control_derivative(double t, int d) const {
    Vec z = state_at(t);
    for (int i = 0; i < d; ++i) z = generator * z;
    return output_map * z;
  }

  /// Derivatives of orders 0..dmax at t, columns indexed by order.
  Mat control_derivatives(double t, int dmax) const {
    Mat out(output_map.rows(), dmax + 1);
    Vec z = state_at(t);
    for (int d = 0; d <= dmax; ++d) {
      out.col(d) = output_map * z;
      z = generator * z;
    }
    return out;
  }
};

namespace detail {

/// Samples z(t) = expm(M t) z0 on a uniform grid, re-anchoring every 64 steps.
inline Mat sample_linear(const Mat& M, const Vec& z0, double T, Eigen::Index len) {
  Mat Z(z0.size(), len);
  const double dt = T / static_cast<double>(len - 1);
  const Mat step = linalg::expm(M * dt);
  Vec z = z0;
  for (Eigen::Index i = 0; i < len; ++i) {
    if (i % 64 == 0) z = linalg::expm(M * (i == len - 1 ? T : static_cast<double>(i) * dt)) * z0;
    Z.col(i) = z;
    z = step * z;
  }
  return Z;
}

inline void fill_samples(ReducedSolution& sol, const Mat& Z, Eigen::Index n, double T,
                         const Mat& lambda_map) {
  sol.x_r = SampledSignal(Z.topRows(n), T);
  sol.v_star = SampledSignal(sol.output_map * Z, T);
  sol.lambda = SampledSignal(lambda_map * Z, T);
}

inline double running_cost_integral(const ReducedLQ& red, const ReducedSolution& sol) {
  SampledSignal g = SampledSignal::zeros(1, sol.x_r.len(), sol.x_r.T);
  for (Eigen::Index i = 0; i < g.len(); ++i) {
    const Vec x = sol.x_r.values.col(i), v = sol.v_star.values.col(i);
    g.values(0, i) = x.dot(red.P * x) + 2 * v.dot(red.Qr * x) + v.dot(red.Rr * v);
  }
  return integrate(g);
}

}  // namespace detail

inline double bvp_tolerance(const ReducedLQ& red, const Tolerances& tol = {}) {
  return tol.bvp_scale * (1 + red.x0.norm() + (red.xT ? red.xT->norm() : 0.0));
}

/// Hamiltonian shooting for the finite-horizon reduced problem.
inline ReducedSolution solve_finite(const ReducedLQ& red, Eigen::Index len = 4097,
                                    const Tolerances& tol = {}) {
  if (!red.T) throw Error(Errc::invalid_argument, "solve_finite needs a finite horizon");
  const double T = *red.T;
  const Eigen::Index n = red.n();
  Eigen::LLT<Mat> llt(red.Rr);
  if (red.k() > 0 && llt.info() != Eigen::Success)
    throw Error(Errc::not_psd, "reduced control weight is not positive definite");
  const Mat RinvQ = red.k() ? Mat(llt.solve(red.Qr)) : Mat::Zero(0, n);
  const Mat RinvBt = red.k() ? Mat(llt.solve(red.Br.transpose())) : Mat::Zero(0, n);
  const Mat At = red.A - red.Br * RinvQ;
  const Mat Pt = red.P - red.Qr.transpose() * RinvQ;

  Mat H(2 * n, 2 * n);
  H << At, 0.5 * red.Br * RinvBt, 2 * Pt, -At.transpose();

  ReducedSolution sol;
  sol.generator = H;
  sol.output_map.resize(red.k(), 2 * n);
  sol.output_map << -RinvQ, 0.5 * RinvBt;

  // Free endpoint: the whole space is admissible.
  const Mat E = red.xT ? linalg::range_basis(red.endpoint_subspace, 1e-10) : Mat::Identity(n, n);
  const Vec xT = red.xT ? *red.xT : Vec::Zero(n);
  const Eigen::Index q = E.cols();
  const Mat Phi = linalg::expm(H * T);
  const Mat Pxx = Phi.topLeftCorner(n, n), Pxl = Phi.topRightCorner(n, n);
  const Mat Plx = Phi.bottomLeftCorner(n, n), Pll = Phi.bottomRightCorner(n, n);
  Mat M = Mat::Zero(n + q, n + q);
  M.topLeftCorner(n, n) = Pxl;
  M.topRightCorner(n, q) = -E;
  M.bottomLeftCorner(q, n) = E.transpose() * Pll;
  Vec rhs(n + q);
  rhs.head(n) = xT - Pxx * red.x0;
  rhs.tail(q) = -E.transpose() * Plx * red.x0;
  sol.condition = linalg::condition_number(M);
  if (!(sol.condition <= tol.cond_max))
    throw Error(Errc::ill_conditioned,
                "shooting matrix condition " + std::to_string(sol.condition) +
                    " (boundary data near a conjugate point or horizon too long)");
  const Vec w = M.fullPivLu().solve(rhs);
  sol.z0.resize(2 * n);
  sol.z0 << red.x0, w.head(n);

  Mat lambda_map = Mat::Zero(n, 2 * n);
  lambda_map.rightCols(n).setIdentity();
  detail::fill_samples(sol, detail::sample_linear(H, sol.z0, T, len), n, T, lambda_map);
  sol.cost_reduced = detail::running_cost_integral(red, sol);
  const Vec shift = E * w.tail(q);
  if (red.endpoint_subspace.cols() > 0 && red.xT)
    sol.endpoint_shift = red.endpoint_subspace.completeOrthogonalDecomposition().solve(shift);
  else
    sol.endpoint_shift = Vec::Zero(red.endpoint_subspace.cols());
  return sol;
}

namespace detail {

/// Matrix sign function by scaled Newton iteration.
inline Mat matrix_sign(const Mat& H) {
  Mat Z = H;
  const double m = static_cast<double>(H.rows());
  for (int it = 0; it < 100; ++it) {
    Eigen::FullPivLU<Mat> lu(Z);
    if (!lu.isInvertible())
      throw Error(Errc::no_stabilizing_solution, "Hamiltonian has eigenvalues on the imaginary axis");
    const double det = std::abs(lu.determinant());
    const double c = (det > 0 && std::isfinite(det)) ? std::pow(det, -1.0 / m) : 1.0;
    const Mat Zn = 0.5 * (c * Z + lu.inverse() / c);
    const double diff = (Zn - Z).norm();
    Z = Zn;
    if (diff <= 1e-13 * Z.norm()) return Z;
  }
  return Z;
}

}  // namespace detail

/// Stabilizing Riccati solution for the infinite-horizon reduced problem.
/// Modes that never reach the running cost (the unobservable subspace of the
/// cost after eliminating the cross term) are cost-free along the jump
/// directions, so the Riccati equation is solved on the observable quotient
/// and stabilizability is required there.
inline ReducedSolution solve_infinite(const ReducedLQ& red, Eigen::Index len = 4097,
                                      const Tolerances& tol = {}) {
  const Eigen::Index n = red.n();
  Eigen::LLT<Mat> llt(red.Rr);
  if (red.k() > 0 && llt.info() != Eigen::Success)
    throw Error(Errc::not_psd, "reduced control weight is not positive definite");
  const Mat RinvQ = red.k() ? Mat(llt.solve(red.Qr)) : Mat::Zero(0, n);
  const Mat At = red.A - red.Br * RinvQ;
  const Mat Pt = linalg::symmetrize(red.P - red.Qr.transpose() * RinvQ);

  // Observable subspace of (At, Pt): row space of [Pt; Pt At; ...].
  Mat O(n * n, n);
  Mat blk = Pt;
  for (Eigen::Index i = 0; i < n; ++i) {
    O.middleRows(i * n, n) = blk;
    blk = blk * At;
  }
  const Mat Vo = linalg::range_basis(O.transpose(), 1e-10);
  const Eigen::Index no = Vo.cols();
  const Mat Aoo = Vo.transpose() * At * Vo;
  const Mat Bo = Vo.transpose() * red.Br;
  const Mat Poo = linalg::symmetrize(Vo.transpose() * Pt * Vo);
  if (no > 0 && !linalg::stabilizable(Aoo, Bo))
    throw Error(Errc::not_stabilizable, "PBH rank test failed at an unstable eigenvalue");

  Mat Pi = Mat::Zero(n, n);
  double slowest = std::numeric_limits<double>::infinity();
  if (no > 0) {
    const Mat BRB = red.k() ? Mat(Bo * llt.solve(Bo.transpose())) : Mat::Zero(no, no);
    Mat Hs(2 * no, 2 * no);
    Hs << Aoo, -BRB, -Poo, -Aoo.transpose();
    const Mat S = detail::matrix_sign(Hs);
    // Stable invariant subspace = kernel of sign(H) + I.
    Eigen::JacobiSVD<Mat> svd(S + Mat::Identity(2 * no, 2 * no), Eigen::ComputeFullV);
    const Mat V = svd.matrixV().rightCols(no);
    const Mat X = V.topRows(no), Y = V.bottomRows(no);
    Eigen::FullPivLU<Mat> lux(X.transpose());
    if (!lux.isInvertible()) throw Error(Errc::no_stabilizing_solution, "stable subspace not a graph");
    const Mat Poo_ric = linalg::symmetrize(lux.solve(Y.transpose()).transpose());  // Y X^{-1}
    Pi = Vo * Poo_ric * Vo.transpose();
    const Mat Kcl = red.k() ? Mat(llt.solve(Bo.transpose() * Poo_ric)) : Mat::Zero(0, no);
    Eigen::EigenSolver<Mat> es(Mat(Aoo - Bo * Kcl), false);
    for (Eigen::Index i = 0; i < no; ++i) slowest = std::min(slowest, -es.eigenvalues()(i).real());
    if (!(slowest > 0))
      throw Error(Errc::no_stabilizing_solution, "closed loop not stable on the observable part");
  }
  const Mat K = red.k() ? Mat(llt.solve(red.Br.transpose() * Pi + red.Qr)) : Mat::Zero(0, n);
  const Mat Acl = red.A - red.Br * K;

  const Mat res = red.A.transpose() * Pi + Pi * red.A + red.P -
                  (Pi * red.Br + red.Qr.transpose()) * K;
  const double scale = 1 + linalg::fro(Pi) * (1 + linalg::fro(red.A)) + linalg::fro(red.P);
  if (linalg::fro(res) > 1e-8 * scale)
    throw Error(Errc::no_stabilizing_solution, "Riccati residual check failed");

  ReducedSolution sol;
  sol.infinite = true;
  sol.generator = Acl;
  sol.output_map = -K;
  sol.z0 = red.x0;
  sol.feedback = K;
  sol.riccati = Pi;
  sol.cost_reduced = red.x0.dot(Pi * red.x0);
  sol.endpoint_shift = Vec::Zero(0);

  // Horizon: 50 slowest time constants of the cost-relevant closed loop,
  // shortened once its state falls below 1e-8 |x0|.
  double Tend = std::isfinite(slowest) ? 50.0 / slowest : 50.0;
  const double x0n = red.x0.norm();
  if (x0n > 0 && no > 0) {
    const Mat probe = detail::sample_linear(Acl, red.x0, Tend, len);
    for (Eigen::Index i = 1; i < len; ++i)
      if ((Vo.transpose() * probe.col(i)).norm() <= 1e-8 * x0n) {
        Tend = Tend * static_cast<double>(i) / static_cast<double>(len - 1);
        break;
      }
  }
  const Mat lambda_map = -2 * Pi;
  detail::fill_samples(sol, detail::sample_linear(Acl, red.x0, Tend, len), n, Tend, lambda_map);
  (void)tol;
  return sol;
}

inline ReducedSolution solve(const ReducedLQ& red, Eigen::Index len = 4097, const Tolerances& tol = {}) {
  return red.T ? solve_finite(red, len, tol) : solve_infinite(red, len, tol);
}

// ---------------------------------------------------------------------------
// Infimum extrapolation

struct InfimumEstimate {
  double estimate = 0;
  double residual = 0;
  double order = 0;  // fitted convergence order in eta
};

/// Richardson extrapolation of J(eta) as eta -> 0 with an Aitken-style order
/// estimate from consecutive triples.
inline InfimumEstimate extrapolate_limit(std::vector<double> etas, std::vector<double> costs,
                                         double tol = std::numeric_limits<double>::infinity()) {
  if (etas.size() != costs.size() || etas.empty())
    throw Error(Errc::invalid_argument, "need matching, nonempty eta and cost lists");
  std::vector<std::size_t> idx(etas.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return etas[a] > etas[b]; });
  std::vector<double> e, J;
  for (auto i : idx) {
    e.push_back(etas[i]);
    J.push_back(costs[i]);
  }
  InfimumEstimate out;
  const std::size_t N = J.size();
  if (N == 1) {
    out.estimate = J[0];
    return out;
  }
  if (N == 2) {
    out.estimate = J[1];
    out.residual = std::abs(J[1] - J[0]);
  } else {
    std::vector<double> ext;
    double last_order = 0;
    for (std::size_t k = 2; k < N; ++k) {
      const double d1 = J[k - 2] - J[k - 1], d2 = J[k - 1] - J[k];
      const double rho = e[k - 1] / e[k];
      double E = J[k];
      const double scale = std::max({std::abs(J[k]), std::abs(J[k - 1]), 1e-300});
      if (std::abs(d1) <= 1e-15 * scale && std::abs(d2) <= 1e-15 * scale) {
        E = J[k];
      } else if (d1 * d2 > 0 && rho > 1) {
        const double q = std::log(d1 / d2) / std::log(e[k - 2] / e[k - 1]);
        if (q > 0 && std::isfinite(q)) {
          last_order = q;
          E = J[k] - d2 / (std::pow(rho, q) - 1);
        }
      }
      ext.push_back(E);
    }
    out.estimate = ext.back();
    out.order = last_order;
    out.residual = ext.size() >= 2 ? std::abs(ext.back() - ext[ext.size() - 2]) : std::abs(J[N - 1] - J[N - 2]);
  }
  if (out.residual > tol)
    throw Error(Errc::non_convergent, "successive extrapolants differ by " + std::to_string(out.residual));
  return out;
}

struct FamilyMember {
  double eta;
  CellControl u;  // original control coordinates
};

inline InfimumEstimate infimum_extrapolate(const LQProblem& p, std::span<const FamilyMember> family,
                                           double tol = std::numeric_limits<double>::infinity()) {
  std::vector<double> etas, costs;
  for (const auto& f : family) {
    etas.push_back(f.eta);
    costs.push_back(simulate_lq(p, f.u).cost);
  }
  return extrapolate_limit(etas, costs, tol);
}

}  // namespace singulo

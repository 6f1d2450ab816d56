#pragma once

#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "singulo/linalg.hpp"
#include "singulo/lq_model.hpp"
#include "singulo/signal.hpp"

namespace singulo {

using BlockIndex = std::pair<int, int>;

/// One level of the desingularization recursion.
///
/// Regular groups 0..level have positive definite weights R_{q,q}; the
/// remaining "singular" channels carry no control weight yet. The public
/// block lists follow the layout (B_00, ..., B_{i,i}, B_{i,s}).
struct DesingStep {
  int level = 0;
  std::vector<Mat> B_blocks, Q_blocks, R_blocks;
  double commutativity_residual = 0;

  // Bookkeeping needed to continue the recursion.
  Mat basis;                              // original control = basis * chain control
  std::vector<Eigen::Index> group_sizes;  // k_0 .. k_level
  std::map<BlockIndex, Mat> B, Q;         // fixed blocks B_{q,l}, Q_{q,l}, q <= l <= level
  std::vector<Mat> R;                     // R_{q,q}
  std::vector<Mat> B_sing, Q_sing;        // B_{q,s}, Q_{q,s}, q <= level

  Eigen::Index singular_count() const { return B_sing.empty() ? 0 : B_sing.back().cols(); }
};

struct DesingChain {
  std::vector<DesingStep> steps;
  int r = 0;
  Eigen::Index n = 0, k = 0;
  Mat basis;
  std::vector<Eigen::Index> group_sizes, group_offsets;  // per group 0..r
  std::map<BlockIndex, Mat> B, Q;                        // B_{i,j}, Q_{i,j}, i <= j
  std::vector<Mat> R;                                    // R_{i,i}
  /// R_{i,i}^{-1}(Q_{i,i}B_{a,l} - B_{i,i}'Q_{a,l}') keyed by (i, a, l).
  std::map<std::tuple<int, int, int>, Mat> gamma_coeffs;
  Mat jump_basis;
  std::vector<BlockIndex> jump_labels;        // one per jump block, lexicographic
  std::vector<Eigen::Index> jump_block_cols;  // starting column of each block
  Eigen::Index reach_rank = 0;                // m
  Eigen::Index jump_dim = 0;                  // p
  Mat Br, Qr, Rr;                             // reduced regular problem data

  Eigen::Index stratum_dim() const { return n + reach_rank - 2 * jump_dim; }
  Eigen::Index group_size(int j) const { return group_sizes[static_cast<std::size_t>(j)]; }
  Eigen::Index group_offset(int j) const { return group_offsets[static_cast<std::size_t>(j)]; }
};

inline double commutativity_tolerance(const LQProblem& p, const Tolerances& tol) {
  return tol.comm_scale * (1 + linalg::fro(p.Q) * linalg::fro(p.B));
}

namespace detail {

inline void fill_public_layout(DesingStep& s) {
  const Eigen::Index n = s.B_sing.empty() ? 0 : s.B_sing.front().rows();
  s.B_blocks.clear();
  s.Q_blocks.clear();
  s.R_blocks.clear();
  for (int q = 0; q <= s.level; ++q) {
    s.B_blocks.push_back(s.B.at({q, q}));
    s.Q_blocks.push_back(s.Q.at({q, q}));
    s.R_blocks.push_back(s.R[static_cast<std::size_t>(q)]);
  }
  const Eigen::Index ks = s.singular_count();
  s.B_blocks.push_back(s.B_sing.empty() ? Mat::Zero(n, 0) : s.B_sing.back());
  s.Q_blocks.push_back(s.Q_sing.empty() ? Mat::Zero(0, n) : s.Q_sing.back());
  s.R_blocks.push_back(Mat::Zero(ks, ks));
  if (ks > 0) {
    const Mat& Bs = s.B_sing.back();
    const Mat& Qs = s.Q_sing.back();
    s.commutativity_residual = linalg::fro(Qs * Bs - Bs.transpose() * Qs.transpose());
  } else {
    s.commutativity_residual = 0;
  }
}

}  // namespace detail

/// Level-0 step built from the normalized control split.
inline DesingStep initial_step(const NormalizedLQ& norm) {
  DesingStep s;
  s.level = 0;
  s.basis = norm.S;
  s.group_sizes = {norm.k0};
  s.B[{0, 0}] = norm.B00;
  s.Q[{0, 0}] = norm.Q00;
  s.R = {norm.R00};
  s.B_sing = {norm.B01};
  s.Q_sing = {norm.Q01};
  detail::fill_public_layout(s);
  return s;
}

/// Applies one reduction: the regular groups act as the "00" block and the
/// singular channels as the "01" block.
inline DesingStep desing_step(const DesingStep& cur, const Mat& A, const Mat& P, double tol_comm,
                              double tol_psd = 1e-9) {
  if (cur.singular_count() == 0) throw Error(Errc::invalid_argument, "no singular channels left");
  if (cur.commutativity_residual > tol_comm)
    throw Error(Errc::commutativity_violated,
                "level " + std::to_string(cur.level) + " residual " +
                    std::to_string(cur.commutativity_residual));
  const Eigen::Index n = A.rows();
  const Mat& Bs = cur.B_sing.back();
  const Mat& Qs = cur.Q_sing.back();

  std::vector<Mat> Bh, Qh;
  for (int q = 0; q <= cur.level; ++q) {
    Bh.push_back(cur.B.at({q, q}));
    Qh.push_back(cur.Q.at({q, q}));
  }
  const Mat Bhat = linalg::hcat(Bh, n);
  const Mat Qhat = linalg::vcat(Qh, n);
  const Mat Rhat = linalg::block_diag(cur.R);

  Mat Atil = A, Ptil = P, BRB = Mat::Zero(n, n);
  if (Bhat.cols() > 0) {
    Eigen::LLT<Mat> llt(Rhat);
    const Mat RinvQ = llt.solve(Qhat);
    Atil = A - Bhat * RinvQ;
    Ptil = P - Qhat.transpose() * RinvQ;
    BRB = Bhat * llt.solve(Bhat.transpose());
  }
  const Mat Bnew = Atil * Bs + BRB * Qs.transpose();
  const Mat Qnew = Bs.transpose() * Ptil - Qs * Atil;
  const Mat Rtil = linalg::symmetrize(Qnew * Bs - Bnew.transpose() * Qs.transpose());

  const auto split = linalg::psd_split(Rtil, tol_psd);
  if (Rtil.size() > 0 && split.min_eigenvalue < -tol_psd * std::max(1.0, std::abs(split.max_eigenvalue)))
    throw Error(Errc::not_psd, "level " + std::to_string(cur.level + 1) + " eigenvalue " +
                                   std::to_string(split.min_eigenvalue));
  const Mat& Up = split.positive;
  const Mat& Un = split.kernel;

  DesingStep next;
  next.level = cur.level + 1;
  const int l = next.level;
  next.group_sizes = cur.group_sizes;
  next.group_sizes.push_back(Up.cols());
  next.B = cur.B;
  next.Q = cur.Q;
  next.R = cur.R;
  next.R.push_back(linalg::symmetrize(Up.transpose() * Rtil * Up));
  next.B[{l, l}] = Bnew * Up;
  next.Q[{l, l}] = Up.transpose() * Qnew;
  for (int q = 0; q <= cur.level; ++q) {
    const auto qi = static_cast<std::size_t>(q);
    next.B[{q, l}] = cur.B_sing[qi] * Up;
    next.Q[{q, l}] = Up.transpose() * cur.Q_sing[qi];
    next.B_sing.push_back(cur.B_sing[qi] * Un);
    next.Q_sing.push_back(Un.transpose() * cur.Q_sing[qi]);
  }
  next.B_sing.push_back(Bnew * Un);
  next.Q_sing.push_back(Un.transpose() * Qnew);

  const Eigen::Index ks = Bs.cols(), k = cur.basis.cols();
  const Mat W = cur.basis.rightCols(ks);
  next.basis = cur.basis;
  next.basis.rightCols(ks) << W * Up, W * Un;
  (void)k;
  detail::fill_public_layout(next);
  return next;
}

inline DesingChain run_chain(const NormalizedLQ& norm, const Tolerances& tol = {}) {
  const LQProblem& p = norm.base;
  const Eigen::Index n = p.n();
  const double tol_comm = commutativity_tolerance(p, tol);
  DesingChain chain;
  chain.n = n;
  chain.k = p.k();
  chain.steps.push_back(initial_step(norm));
  while (chain.steps.back().singular_count() > 0) {
    if (chain.steps.back().level >= n)
      throw Error(Errc::order_exceeded, "recursion passed level " + std::to_string(n));
    chain.steps.push_back(desing_step(chain.steps.back(), p.A, p.P, tol_comm, tol.psd));
  }
  const DesingStep& last = chain.steps.back();
  chain.r = last.level;
  chain.basis = last.basis;
  chain.group_sizes = last.group_sizes;
  chain.B = last.B;
  chain.Q = last.Q;
  chain.R = last.R;
  Eigen::Index off = 0;
  for (auto s : chain.group_sizes) {
    chain.group_offsets.push_back(off);
    off += s;
  }

  const int r = chain.r;
  for (int i = 0; i < r; ++i) {
    if (chain.group_size(i) == 0) continue;
    Eigen::LLT<Mat> llt(chain.R[static_cast<std::size_t>(i)]);
    const Mat& Bii = chain.B.at({i, i});
    const Mat& Qii = chain.Q.at({i, i});
    for (int a = i; a < r; ++a)
      for (int l = a + 1; l <= r; ++l) {
        if (chain.group_size(l) == 0) continue;
        const Mat C = Qii * chain.B.at({a, l}) - Bii.transpose() * chain.Q.at({a, l}).transpose();
        chain.gamma_coeffs[{i, a, l}] = llt.solve(C);
      }
  }

  std::vector<Mat> cols;
  Eigen::Index c = 0;
  for (int i = 0; i < r; ++i)
    for (int j = i + 1; j <= r; ++j) {
      if (chain.group_size(j) == 0) continue;
      chain.jump_labels.push_back({i, j});
      chain.jump_block_cols.push_back(c);
      cols.push_back(chain.B.at({i, j}));
      c += chain.group_size(j);
    }
  chain.jump_basis = linalg::hcat(cols, n);
  chain.reach_rank = linalg::controllability_rank(p.A, p.B);
  chain.jump_dim = chain.jump_basis.cols() ? linalg::rank(chain.jump_basis, 1e-9) : 0;

  std::vector<Mat> Bd, Qd;
  for (int j = 0; j <= r; ++j) {
    Bd.push_back(chain.B.at({j, j}));
    Qd.push_back(chain.Q.at({j, j}));
  }
  chain.Br = linalg::hcat(Bd, n);
  chain.Qr = linalg::vcat(Qd, n);
  chain.Rr = linalg::block_diag(chain.R);
  return chain;
}

/// v = gamma_r u, with u given in chain control coordinates.
inline SampledSignal gamma_apply(const DesingChain& chain, const SampledSignal& u) {
  if (u.dim() != chain.k) throw Error(Errc::invalid_argument, "control dimension mismatch");
  const int r = chain.r;
  std::vector<SampledSignal> prim{u};
  for (int d = 1; d <= r + 1; ++d) prim.push_back(primitive(prim.back()));
  SampledSignal v = SampledSignal::zeros(u.dim(), u.len(), u.T);
  for (int j = 0; j <= r; ++j) {
    const Eigen::Index kj = chain.group_size(j), oj = chain.group_offset(j);
    if (kj == 0) continue;
    v.values.middleRows(oj, kj) = prim[static_cast<std::size_t>(j)].values.middleRows(oj, kj);
    for (int a = j; a < r; ++a)
      for (int l = a + 1; l <= r; ++l) {
        auto it = chain.gamma_coeffs.find({j, a, l});
        if (it == chain.gamma_coeffs.end()) continue;
        v.values.middleRows(oj, kj) +=
            it->second * prim[static_cast<std::size_t>(a + 1)].values.middleRows(chain.group_offset(l), chain.group_size(l));
      }
  }
  return v;
}

namespace detail {
inline nlohmann::json matrix_json(const Mat& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(row);
  }
  return rows;
}
}  // namespace detail

inline nlohmann::json chain_to_json(const DesingChain& c) {
  nlohmann::json j;
  j["r"] = c.r;
  j["n"] = c.n;
  j["k"] = c.k;
  j["group_sizes"] = c.group_sizes;
  j["m"] = c.reach_rank;
  j["p"] = c.jump_dim;
  j["stratum_dim"] = c.stratum_dim();
  j["control_basis"] = detail::matrix_json(c.basis);
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& s : c.steps) {
    nlohmann::json L;
    L["level"] = s.level;
    L["commutativity_residual"] = s.commutativity_residual;
    nlohmann::json Bs = nlohmann::json::array(), Qs = nlohmann::json::array(), Rs = nlohmann::json::array();
    for (const auto& M : s.B_blocks) Bs.push_back(detail::matrix_json(M));
    for (const auto& M : s.Q_blocks) Qs.push_back(detail::matrix_json(M));
    for (const auto& M : s.R_blocks) Rs.push_back(detail::matrix_json(M));
    L["B_blocks"] = Bs;
    L["Q_blocks"] = Qs;
    L["R_blocks"] = Rs;
    levels.push_back(L);
  }
  j["levels"] = levels;
  nlohmann::json jb = nlohmann::json::array();
  for (std::size_t b = 0; b < c.jump_labels.size(); ++b) {
    const auto [i, jj] = c.jump_labels[b];
    jb.push_back({{"i", i}, {"j", jj}, {"B", detail::matrix_json(c.B.at({i, jj}))}});
  }
  j["jump_basis"] = jb;
  return j;
}

}  // namespace singulo

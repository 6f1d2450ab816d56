#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "singulo/types.hpp"

namespace singulo::linalg {

inline Mat expm(const Mat& M) {
  if (M.size() == 0) return M;
  return M.exp();
}

inline Mat symmetrize(const Mat& M) { return 0.5 * (M + M.transpose()); }

inline double fro(const Mat& M) { return M.size() == 0 ? 0.0 : M.norm(); }

/// Orthonormal basis of the range of M (columns), via SVD with relative tolerance.
inline Mat range_basis(const Mat& M, double rel_tol = 1e-10) {
  if (M.cols() == 0 || M.rows() == 0) return Mat::Zero(M.rows(), 0);
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullU);
  const Vec& s = svd.singularValues();
  const double cut = rel_tol * std::max(1.0, s.size() ? s(0) : 0.0);
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > cut) ++rank;
  return svd.matrixU().leftCols(rank);
}

inline Eigen::Index rank(const Mat& M, double rel_tol = 1e-10) { return range_basis(M, rel_tol).cols(); }

/// Orthonormal basis of the orthogonal complement of range(M) in R^rows.
inline Mat complement_basis(const Mat& M, double rel_tol = 1e-10) {
  const Eigen::Index n = M.rows();
  if (M.cols() == 0) return Mat::Identity(n, n);
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullU);
  const Vec& s = svd.singularValues();
  const double cut = rel_tol * std::max(1.0, s.size() ? s(0) : 0.0);
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > cut) ++rank;
  return svd.matrixU().rightCols(n - rank);
}

/// Canonical orthonormal basis of a subspace: Gram-Schmidt on the projections
/// of e_1, e_2, ... so the result depends only on the subspace. Each vector is
/// positive in its pivot entry.
inline Mat canonical_basis(const Mat& span) {
  const Eigen::Index n = span.rows(), d = span.cols();
  if (d == 0) return Mat::Zero(n, 0);
  const Mat proj = span * span.transpose();
  Mat out(n, d);
  Eigen::Index found = 0;
  for (Eigen::Index i = 0; i < n && found < d; ++i) {
    Vec v = proj.col(i);
    for (Eigen::Index j = 0; j < found; ++j) v -= out.col(j).dot(v) * out.col(j);
    for (Eigen::Index j = 0; j < found; ++j) v -= out.col(j).dot(v) * out.col(j);
    const double nv = v.norm();
    if (nv > 1e-8) out.col(found++) = v / nv;
  }
  return out.leftCols(found);
}

/// Eigen-split of a symmetric PSD matrix: eigenvalues in descending order,
/// positive eigenvectors sign-normalized, kernel basis canonical.
struct PsdSplit {
  Vec positive_values;  // descending
  Mat positive;         // columns
  Mat kernel;           // columns
  double min_eigenvalue = 0;
  double max_eigenvalue = 0;
};

inline PsdSplit psd_split(const Mat& S, double tol_rel) {
  PsdSplit out;
  const Eigen::Index k = S.rows();
  if (k == 0) {
    out.positive = out.kernel = Mat::Zero(0, 0);
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(S));
  const Vec& ev = es.eigenvalues();  // ascending
  out.min_eigenvalue = ev(0);
  out.max_eigenvalue = ev(k - 1);
  const double tau = tol_rel * std::max(1.0, std::abs(ev(k - 1)));
  std::vector<Eigen::Index> pos, ker;
  for (Eigen::Index i = k - 1; i >= 0; --i) (ev(i) > tau ? pos : ker).push_back(i);
  out.positive_values.resize(static_cast<Eigen::Index>(pos.size()));
  out.positive.resize(k, static_cast<Eigen::Index>(pos.size()));
  for (std::size_t j = 0; j < pos.size(); ++j) {
    Vec v = es.eigenvectors().col(pos[j]);
    Eigen::Index piv;
    v.cwiseAbs().maxCoeff(&piv);
    if (v(piv) < 0) v = -v;
    out.positive.col(static_cast<Eigen::Index>(j)) = v;
    out.positive_values(static_cast<Eigen::Index>(j)) = ev(pos[j]);
  }
  Mat kspan(k, static_cast<Eigen::Index>(ker.size()));
  for (std::size_t j = 0; j < ker.size(); ++j) kspan.col(static_cast<Eigen::Index>(j)) = es.eigenvectors().col(ker[j]);
  out.kernel = canonical_basis(kspan);
  if (out.kernel.cols() != kspan.cols()) out.kernel = kspan;
  return out;
}

/// Rank of the controllability matrix (B, AB, ..., A^{n-1}B).
inline Eigen::Index controllability_rank(const Mat& A, const Mat& B) {
  const Eigen::Index n = A.rows();
  if (B.cols() == 0) return 0;
  Mat K(n, n * B.cols());
  Mat blk = B;
  for (Eigen::Index i = 0; i < n; ++i) {
    K.middleCols(i * B.cols(), B.cols()) = blk;
    blk = A * blk;
  }
  return rank(K, 1e-9);
}

/// PBH test: rank [A - lambda I, B] = n for every eigenvalue with Re >= 0.
inline bool stabilizable(const Mat& A, const Mat& B) {
  const Eigen::Index n = A.rows();
  Eigen::ComplexEigenSolver<Mat> es(A, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> lam = es.eigenvalues()(i);
    if (lam.real() < -1e-12) continue;
    Eigen::MatrixXcd M(n, n + B.cols());
    M.leftCols(n) = A.cast<std::complex<double>>() - lam * Eigen::MatrixXcd::Identity(n, n);
    M.rightCols(B.cols()) = B.cast<std::complex<double>>();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
    const auto& s = svd.singularValues();
    const double cut = 1e-10 * std::max(1.0, s(0));
    Eigen::Index r = 0;
    while (r < s.size() && s(r) > cut) ++r;
    if (r < n) return false;
  }
  return true;
}

inline double condition_number(const Mat& M) {
  if (M.size() == 0) return 1.0;
  Eigen::JacobiSVD<Mat> svd(M);
  const Vec& s = svd.singularValues();
  if (s(s.size() - 1) == 0) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

/// Block-diagonal assembly.
inline Mat block_diag(const std::vector<Mat>& blocks) {
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    r += b.rows();
    c += b.cols();
  }
  Mat out = Mat::Zero(r, c);
  r = c = 0;
  for (const auto& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

inline Mat hcat(const std::vector<Mat>& blocks, Eigen::Index rows) {
  Eigen::Index c = 0;
  for (const auto& b : blocks) c += b.cols();
  Mat out(rows, c);
  c = 0;
  for (const auto& b : blocks) {
    out.middleCols(c, b.cols()) = b;
    c += b.cols();
  }
  return out;
}

inline Mat vcat(const std::vector<Mat>& blocks, Eigen::Index cols) {
  Eigen::Index r = 0;
  for (const auto& b : blocks) r += b.rows();
  Mat out(r, cols);
  r = 0;
  for (const auto& b : blocks) {
    out.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  return out;
}

}  // namespace singulo::linalg

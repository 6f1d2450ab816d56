#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "singulo/linalg.hpp"
#include "singulo/types.hpp"

namespace singulo {

/// Linear dynamics x' = Ax + Bu with cost x'Px + 2u'Qx + u'Ru.
/// An empty `T` means an infinite horizon; an empty `xT` a free endpoint.
struct LQProblem {
  Mat A, B, P, Q, R;
  std::optional<double> T;
  Vec x0;
  std::optional<Vec> xT;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index k() const { return B.cols(); }
  bool infinite() const { return !T.has_value(); }

  /// Scale used by the endpoint-related tolerances: 1 + |x0| + |xT|.
  double endpoint_scale() const { return 1.0 + x0.norm() + (xT ? xT->norm() : 0.0); }
};

inline std::vector<std::string> validate(const LQProblem& p, const Tolerances& tol = {}) {
  std::vector<std::string> out;
  const Eigen::Index n = p.A.rows(), k = p.B.cols();
  bool dims = p.A.cols() == n && p.B.rows() == n && p.P.rows() == n && p.P.cols() == n &&
              p.Q.rows() == k && p.Q.cols() == n && p.R.rows() == k && p.R.cols() == k &&
              p.x0.size() == n && (!p.xT || p.xT->size() == n);
  if (!dims) {
    out.push_back("dimension mismatch");
    return out;
  }
  if (linalg::fro(p.P - p.P.transpose()) > tol.asymmetry * (1 + linalg::fro(p.P)))
    out.push_back("P not symmetric");
  if (linalg::fro(p.R - p.R.transpose()) > tol.asymmetry * (1 + linalg::fro(p.R)))
    out.push_back("R not symmetric");
  if (k > 0) {
    Eigen::SelfAdjointEigenSolver<Mat> es(linalg::symmetrize(p.R), Eigen::EigenvaluesOnly);
    const Vec& ev = es.eigenvalues();
    if (ev(0) < -tol.psd * std::max(1.0, ev(k - 1))) out.push_back("R not PSD");
  }
  if (p.T && !(*p.T > 0 && std::isfinite(*p.T))) out.push_back("horizon not positive");
  if (!p.A.allFinite() || !p.B.allFinite() || !p.P.allFinite() || !p.Q.allFinite() ||
      !p.R.allFinite() || !p.x0.allFinite() || (p.xT && !p.xT->allFinite()))
    out.push_back("non-finite entry");
  return out;
}

/// Problem expressed in a control basis where R = diag(R00, 0).
struct NormalizedLQ {
  LQProblem base;
  Mat S;  // original control = S * normalized control
  Eigen::Index k0 = 0;
  Mat R00, B00, B01, Q00, Q01;
};

inline NormalizedLQ normalize_controls(const LQProblem& p, const Tolerances& tol = {}) {
  const auto issues = validate(p, tol);
  if (!issues.empty()) throw Error(Errc::invalid_problem, issues.front());
  NormalizedLQ out;
  out.base = p;
  const Eigen::Index k = p.k();
  const auto split = linalg::psd_split(p.R, tol.psd);
  out.k0 = split.positive.cols();
  out.S.resize(k, k);
  out.S << split.positive, split.kernel;
  const Mat Bs = p.B * out.S;
  const Mat Qs = out.S.transpose() * p.Q;
  out.R00 = linalg::symmetrize(split.positive.transpose() * p.R * split.positive);
  out.B00 = Bs.leftCols(out.k0);
  out.B01 = Bs.rightCols(k - out.k0);
  out.Q00 = Qs.topRows(out.k0);
  out.Q01 = Qs.bottomRows(k - out.k0);
  return out;
}

// ---------------------------------------------------------------------------
// JSON problem files

namespace detail {

inline Mat json_matrix(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array()) throw Error(Errc::parse_error, "key '" + key + "': expected array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Mat::Zero(0, 0);
  if (!j[0].is_array()) throw Error(Errc::parse_error, "key '" + key + "': expected array of rows");
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Mat M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw Error(Errc::parse_error, "key '" + key + "': ragged row " + std::to_string(r));
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw Error(Errc::parse_error, "key '" + key + "': non-numeric entry");
      M(r, c) = v.get<double>();
    }
  }
  return M;
}

inline Vec json_vector(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array()) throw Error(Errc::parse_error, "key '" + key + "': expected array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(Errc::parse_error, "key '" + key + "': non-numeric entry");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Mat symmetrize_with_warning(const Mat& M, const std::string& key, double tol,
                                   std::vector<std::string>* warnings) {
  if (M.rows() != M.cols()) return M;
  if (warnings && linalg::fro(M - M.transpose()) > tol)
    warnings->push_back("key '" + key + "' symmetrized (asymmetry above tolerance)");
  return linalg::symmetrize(M);
}

}  // namespace detail

/// Parses a problem object. Q and R default to zero when absent.
inline LQProblem problem_from_json(const nlohmann::json& j, std::vector<std::string>* warnings = nullptr,
                                   const Tolerances& tol = {}) {
  if (!j.is_object()) throw Error(Errc::parse_error, "problem must be a JSON object");
  for (const char* key : {"A", "B", "P", "x0"})
    if (!j.contains(key)) throw Error(Errc::parse_error, std::string("missing key '") + key + "'");
  LQProblem p;
  p.A = detail::json_matrix(j["A"], "A");
  p.B = detail::json_matrix(j["B"], "B");
  p.P = detail::symmetrize_with_warning(detail::json_matrix(j["P"], "P"), "P", tol.asymmetry, warnings);
  p.x0 = detail::json_vector(j["x0"], "x0");
  const Eigen::Index n = p.A.rows(), k = p.B.cols();
  p.Q = j.contains("Q") ? detail::json_matrix(j["Q"], "Q") : Mat::Zero(k, n);
  p.R = j.contains("R") ? detail::symmetrize_with_warning(detail::json_matrix(j["R"], "R"), "R",
                                                           tol.asymmetry, warnings)
                        : Mat::Zero(k, k);
  if (!j.contains("T")) throw Error(Errc::parse_error, "missing key 'T'");
  const auto& T = j["T"];
  if (T.is_string()) {
    if (T.get<std::string>() != "inf") throw Error(Errc::parse_error, "key 'T': expected number or \"inf\"");
  } else if (T.is_number()) {
    p.T = T.get<double>();
  } else {
    throw Error(Errc::parse_error, "key 'T': expected number or \"inf\"");
  }
  if (j.contains("xT") && !j["xT"].is_null()) p.xT = detail::json_vector(j["xT"], "xT");
  const auto issues = validate(p, tol);
  if (!issues.empty()) throw Error(Errc::invalid_problem, issues.front());
  return p;
}

inline LQProblem load_problem(const std::string& path, std::vector<std::string>* warnings = nullptr,
                              const Tolerances& tol = {}) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, std::string("malformed JSON: ") + e.what());
  }
  return problem_from_json(j, warnings, tol);
}

}  // namespace singulo

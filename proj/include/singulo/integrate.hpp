#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "singulo/lq_model.hpp"
#include "singulo/signal.hpp"

namespace singulo {

/// Stage inside a cell: right limit at the start, midpoint, left limit at the end.
enum class Stage { start = 0, mid = 1, end = 2 };

struct Trajectory {
  std::vector<double> nodes;
  Mat X;  // n x nodes
  double cost = 0;

  Vec final_state() const { return X.col(X.cols() - 1); }
};

/// Classical RK4 over arbitrary nodes. rhs(cell, stage, t, x) may depend on
/// the stage so that jumps at nodes are seen from the correct side. The
/// running cost is integrated per cell by Simpson with a cubic Hermite
/// midpoint state.
template <class Rhs, class Cost>
Trajectory integrate_cells(const std::vector<double>& nodes, const Vec& x0, Rhs&& rhs, Cost&& cost,
                           double blowup = 1e12) {
  Trajectory tr;
  tr.nodes = nodes;
  const Eigen::Index cells = static_cast<Eigen::Index>(nodes.size()) - 1;
  tr.X.resize(x0.size(), cells + 1);
  tr.X.col(0) = x0;
  Vec x = x0;
  double J = 0;
  for (Eigen::Index c = 0; c < cells; ++c) {
    const double a = nodes[static_cast<std::size_t>(c)], b = nodes[static_cast<std::size_t>(c) + 1];
    const double h = b - a, m = a + h / 2;
    const Vec k1 = rhs(c, Stage::start, a, x);
    const Vec k2 = rhs(c, Stage::mid, m, Vec(x + h / 2 * k1));
    const Vec k3 = rhs(c, Stage::mid, m, Vec(x + h / 2 * k2));
    const Vec k4 = rhs(c, Stage::end, b, Vec(x + h * k3));
    const Vec xn = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    const Vec f1 = rhs(c, Stage::end, b, xn);
    const Vec xm = 0.5 * (x + xn) + h / 8 * (k1 - f1);
    J += h / 6 * (cost(c, Stage::start, a, x) + 4 * cost(c, Stage::mid, m, xm) + cost(c, Stage::end, b, xn));
    if (!xn.allFinite() || xn.norm() > blowup)
      throw Error(Errc::blowup, "state norm exceeded bound at t=" + std::to_string(b));
    x = xn;
    tr.X.col(c + 1) = x;
  }
  tr.cost = J;
  return tr;
}

inline const Mat& stage_values(const CellControl& u, Stage s) {
  return s == Stage::start ? u.start : (s == Stage::mid ? u.mid : u.end);
}

/// Integrates the LQ dynamics and cost for a control given in original coordinates.
inline Trajectory simulate_lq(const LQProblem& p, const CellControl& u) {
  auto rhs = [&](Eigen::Index c, Stage s, double, const Vec& x) -> Vec {
    return p.A * x + p.B * stage_values(u, s).col(c);
  };
  auto cost = [&](Eigen::Index c, Stage s, double, const Vec& x) -> double {
    const auto v = stage_values(u, s).col(c);
    return x.dot(p.P * x) + 2 * v.dot(p.Q * x) + v.dot(p.R * v);
  };
  return integrate_cells(u.nodes, p.x0, rhs, cost);
}

}  // namespace singulo

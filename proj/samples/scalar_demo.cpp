// Degree of singularity of x' = u with cost int x^2 and x(0) = x(1) = 1.

#include <cstdio>

#include "singulo/singulo.hpp"

int main() {
  using namespace singulo;
  LQProblem p;
  p.A = Mat::Zero(1, 1);
  p.B = Mat::Ones(1, 1);
  p.P = Mat::Ones(1, 1);
  p.Q = Mat::Zero(1, 1);
  p.R = Mat::Zero(1, 1);
  p.T = 1.0;
  p.x0 = Vec::Ones(1);
  p.xT = Vec::Ones(1);

  const Analysis a = analyze(p);
  std::printf("order r = %d\n", a.chain.r);
  for (const auto& [ij, v] : a.jumps.alpha) std::printf("alpha(%d,%d) = %.6f\n", ij.first, ij.second, v(0));
  for (const auto& [ij, v] : a.jumps.beta) std::printf("beta(%d,%d) = %.6f\n", ij.first, ij.second, v(0));
  std::printf("sigma exact = %.6f\n", a.exact.sigma);

  std::vector<double> etas;
  for (int i = 1; i <= 13; ++i) etas.push_back(std::ldexp(1.0, -i));
  const MinimizingFamily fam = analysis_family(a, etas);
  for (const auto& e : fam.entries) std::printf("eta=%-12g cost=%-12g |u|=%g\n", e.eta, e.cost, e.l2norm);
  std::printf("sigma fitted = %.6f\n", fit_sigma(fam).sigma);
}

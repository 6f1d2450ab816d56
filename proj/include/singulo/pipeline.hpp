#pragma once

#include <optional>
#include <vector>

#include "singulo/desingularization.hpp"
#include "singulo/estimator.hpp"
#include "singulo/generalized.hpp"
#include "singulo/lq_model.hpp"
#include "singulo/reduced_lq.hpp"

namespace singulo {

/// Chain, reduced solution and boundary decomposition of one LQ problem.
struct Analysis {
  LQProblem problem;
  DesingChain chain;
  ReducedLQ reduced;
  ReducedSolution solution;
  JumpDecomposition jumps;
  bool control_zero = false;
  SigmaReport exact;
  StratumReport stratum;
};

inline Analysis analyze(const LQProblem& p, const Tolerances& tol = {}, Eigen::Index len = 4097) {
  const auto issues = validate(p, tol);
  if (!issues.empty()) throw Error(Errc::invalid_problem, issues.front());
  Analysis a;
  a.problem = p;
  a.chain = run_chain(normalize_controls(p, tol), tol);
  a.reduced = make_reduced(a.chain, p);
  a.solution = solve(a.reduced, len, tol);
  a.jumps = decompose_boundary(a.chain, a.solution, p.x0, p.xT, tol);
  a.control_zero = is_zero_control(a.solution, a.jumps);
  a.exact = a.jumps.infinite ? sigma_exact_infinite(a.jumps, a.control_zero) : sigma_exact(a.jumps, a.control_zero);
  a.stratum = stratum_report(a.chain, a.jumps, a.control_zero);
  return a;
}

/// Minimizing family of the analysed problem; the infimum is the reduced
/// optimal value unless `extrapolate` is set.
inline MinimizingFamily analysis_family(const Analysis& a, const std::vector<double>& etas, unsigned jobs = 1,
                                        bool extrapolate = false) {
  const GeneralizedControl gc = synthesize(a.chain, a.solution, a.jumps);
  FamilyOptions opt;
  opt.jobs = jobs;
  if (!extrapolate) opt.inf_estimate = a.solution.cost_reduced;
  return build_minimizing_family(a.problem, a.chain, a.solution, gc, etas, opt);
}

}  // namespace singulo

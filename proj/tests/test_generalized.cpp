#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "singulo/integrate.hpp"
#include "singulo/pipeline.hpp"

using namespace singulo;

namespace {

LQProblem chain_problem(Eigen::Index n, const Vec& x0, const std::optional<Vec>& xT, bool full_weight = false) {
  LQProblem p;
  p.A = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) p.A(i, i + 1) = 1;
  p.B = Mat::Zero(n, 1);
  p.B(n - 1, 0) = 1;
  p.P = Mat::Zero(n, n);
  p.P(0, 0) = 1;
  if (full_weight) p.P = Mat::Identity(n, n);
  p.Q = Mat::Zero(1, n);
  p.R = Mat::Zero(1, 1);
  p.T = 1.0;
  p.x0 = x0;
  p.xT = xT;
  return p;
}

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

LQProblem mixed_problem() {
  LQProblem p;
  p.A = Mat::Zero(2, 2);
  p.A(0, 1) = 0.5;
  p.B = Mat::Identity(2, 2);
  p.P = Mat::Identity(2, 2);
  p.P(1, 1) = 10;
  p.Q = Mat(2, 2);
  p.Q << 0, 2, 3, 0;
  p.R = Mat::Zero(2, 2);
  p.R(0, 0) = 1;
  p.T = 1.0;
  p.x0 = vec({1, -1});
  p.xT = vec({0.5, 2});
  return p;
}

JumpDecomposition synthetic(std::map<BlockIndex, Vec> alpha, std::map<BlockIndex, Vec> beta) {
  JumpDecomposition d;
  d.alpha = std::move(alpha);
  d.beta = std::move(beta);
  d.tol_zero = 1e-7;
  return d;
}

}  // namespace

TEST(Sigma, ValueFormula) {
  EXPECT_DOUBLE_EQ(sigma_value(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(sigma_value(0, 2), 1.0 / 6);
  EXPECT_DOUBLE_EQ(sigma_value(1, 2), 1.5);
  EXPECT_DOUBLE_EQ(sigma_value(2, 3), 2.5);
  const auto vs = sigma_value_set(2);
  ASSERT_EQ(vs.size(), 3u);
  EXPECT_DOUBLE_EQ(vs[0].first, 1.0 / 6);
  EXPECT_DOUBLE_EQ(vs[1].first, 0.5);
  EXPECT_DOUBLE_EQ(vs[2].first, 1.5);
  // (0,1) and (1,3) share the value 1/2 when r = 3.
  for (const auto& [v, labels] : sigma_value_set(3))
    if (std::abs(v - 0.5) < 1e-12) {
      EXPECT_EQ(labels.size(), 2u);
    }
}

TEST(Sigma, SyntheticDecompositions) {
  const Vec one = Vec::Ones(1), tiny = Vec::Constant(1, 1e-9);
  EXPECT_DOUBLE_EQ(sigma_exact(synthetic({{{0, 2}, one}}, {}), false).sigma, 1.0 / 6);
  EXPECT_DOUBLE_EQ(sigma_exact(synthetic({{{0, 2}, tiny}}, {}), false).sigma, 0);
  EXPECT_DOUBLE_EQ(sigma_exact(synthetic({{{0, 2}, one}}, {{{1, 2}, one}}), false).sigma, 1.5);
  EXPECT_DOUBLE_EQ(sigma_exact_infinite(synthetic({{{0, 2}, one}}, {{{1, 2}, one}}), false).sigma, 1.0 / 6);
  for (int r = 1; r <= 5; ++r)
    EXPECT_DOUBLE_EQ(sigma_exact(synthetic({{{r - 1, r}, one}}, {}), false).sigma, r - 0.5);
  EXPECT_EQ(sigma_exact(synthetic({}, {}), true).sigma, -std::numeric_limits<double>::infinity());
  const auto rep = sigma_exact(synthetic({{{0, 1}, one}, {{1, 3}, one}}, {}), false);
  EXPECT_EQ(rep.contributors.size(), 2u);
  EXPECT_FALSE(sigma_exact(synthetic({{{0, 1}, Vec::Constant(1, 3e-7)}}, {}), false).warnings.empty());
}

TEST(Generalized, ScalarIntegrator) {
  LQProblem p;
  p.A = Mat::Zero(1, 1);
  p.B = p.P = Mat::Ones(1, 1);
  p.Q = p.R = Mat::Zero(1, 1);
  p.T = 1.0;
  p.x0 = vec({1});
  p.xT = vec({-2});
  const auto a = analyze(p, {}, 257);
  const double s = a.chain.B.at({0, 1})(0, 0);
  EXPECT_NEAR(s * a.jumps.alpha.at({0, 1})(0), -1, 1e-10);
  EXPECT_NEAR(s * a.jumps.beta.at({0, 1})(0), -2, 1e-10);
  EXPECT_DOUBLE_EQ(a.exact.sigma, 0.5);
  EXPECT_FALSE(a.control_zero);
  const auto gc = synthesize(a.chain, a.solution, a.jumps);
  EXPECT_LT(gc.analytic.values.cwiseAbs().maxCoeff(), 1e-12);

  p.x0 = vec({0});
  p.xT = vec({0});
  const auto z = analyze(p, {}, 257);
  EXPECT_TRUE(z.control_zero);
  EXPECT_EQ(z.exact.sigma, -std::numeric_limits<double>::infinity());
  const auto st = stratum_report(z.chain, z.jumps, true);
  EXPECT_EQ(sigma_report_json(z.exact, st, z.jumps)["sigma"], "-inf");
}

TEST(Generalized, DoubleIntegratorPositionWeight) {
  const auto a = analyze(chain_problem(2, vec({1, 0.5}), vec({-0.5, 1})), {}, 1025);
  ASSERT_EQ(a.chain.r, 2);
  EXPECT_NEAR(std::abs(a.jumps.alpha.at({1, 2})(0)), 1, 1e-9);
  // x1 = 0 forces x2 = 0 inside, so both components jump to the origin and back.
  EXPECT_NEAR(std::abs(a.jumps.alpha.at({0, 2})(0)), 0.5, 1e-9);
  EXPECT_NEAR(std::abs(a.jumps.beta.at({1, 2})(0)), 0.5, 1e-9);
  EXPECT_NEAR(std::abs(a.jumps.beta.at({0, 2})(0)), 1, 1e-9);
  EXPECT_DOUBLE_EQ(a.exact.sigma, 1.5);
  ASSERT_EQ(a.exact.contributors.size(), 1u);
  EXPECT_EQ(a.exact.contributors[0], BlockIndex(1, 2));
  EXPECT_TRUE(a.stratum.generic);
  EXPECT_EQ(a.stratum.classical_dim, 0);

  // Start already at x1 = 0: only the lower-order pair can remain.
  const auto b = analyze(chain_problem(2, vec({0, 0.5}), vec({0, 1})), {}, 1025);
  EXPECT_DOUBLE_EQ(b.exact.sigma, 1.0 / 6);
}

TEST(Generalized, TripleIntegrator) {
  const auto a = analyze(chain_problem(3, vec({1, 0.5, -0.2}), vec({0.3, 1, 0.4})), {}, 1025);
  ASSERT_EQ(a.chain.r, 3);
  EXPECT_DOUBLE_EQ(a.exact.sigma, 2.5);
}

TEST(Generalized, InfiniteHorizonUsesStartOnly) {
  LQProblem p;
  p.A = p.B = p.P = Mat::Ones(1, 1);
  p.Q = p.R = Mat::Zero(1, 1);
  p.x0 = vec({1});
  const auto a = analyze(p, {}, 1025);
  EXPECT_TRUE(a.jumps.infinite);
  EXPECT_TRUE(a.jumps.beta.empty());
  EXPECT_DOUBLE_EQ(a.exact.sigma, 0.5);
  EXPECT_EQ(a.exact.mode, HorizonMode::infinite);
  // The optimal interior state is the origin, reached by the initial jump.
  EXPECT_NEAR(a.solution.cost_reduced, 0, 1e-12);
  EXPECT_NEAR((p.x0 + a.jumps.jump0).norm(), 0, 1e-10);

  // Same answer without drift, where the reduced input map vanishes.
  p.A = Mat::Zero(1, 1);
  const auto b = analyze(p, {}, 1025);
  EXPECT_DOUBLE_EQ(b.exact.sigma, 0.5);
}

TEST(Generalized, InfiniteDoubleIntegrator) {
  auto p = chain_problem(2, vec({1, 0.5}), std::nullopt, true);
  p.T.reset();
  const auto a = analyze(p, {}, 4097);
  ASSERT_EQ(a.chain.r, 1);
  // Reduced problem: x1' = w with cost x1^2 + w^2, so the value is x1(0)^2.
  EXPECT_NEAR(a.solution.cost_reduced, 1, 1e-10);
  EXPECT_DOUBLE_EQ(a.exact.sigma, 0.5);
  // Interior x2 starts at -x1(0) = -1.
  EXPECT_NEAR((p.x0 + a.jumps.jump0)(1), -1, 1e-9);
}

TEST(Generalized, InteriorTrajectorySolvesTheOriginalSystem) {
  for (const LQProblem& p : {chain_problem(2, vec({1, 0.5}), vec({-0.5, 1}), true), mixed_problem(),
                             chain_problem(3, vec({1, 0.5, -0.2}), vec({0.3, 1, 0.4}), true)}) {
    const auto a = analyze(p, {}, 2049);
    const auto gc = synthesize(a.chain, a.solution, a.jumps);
    auto x_at = [&](double t) {
      const Vec z = a.solution.state_at(t);
      return interior_state(a.chain, z.head(p.n()), primitive_values(a.chain, a.solution.control_derivatives(t, a.chain.r)));
    };
    // Right limit at 0 and left limit at T are the boundary data minus the jumps.
    EXPECT_LT((x_at(0) - (p.x0 + a.jumps.jump0)).norm(), 1e-10);
    const double h = 1e-4;
    for (Eigen::Index i : {256, 1024, 1800}) {
      const double t = gc.analytic.time(i);
      const Vec dx = (x_at(t + h) - x_at(t - h)) / (2 * h);
      const Vec u = gc.basis * gc.analytic.values.col(i);
      EXPECT_LT((dx - p.A * x_at(t) - p.B * u).norm(), 1e-6 * (1 + dx.norm())) << p.n() << " t=" << t;
    }
    // Integrating the analytic part from the post-jump state lands on xT minus the final jump.
    const auto nodes = uniform_nodes(1.0, 2048);
    const auto u = CellControl::from_function(nodes, p.k(), [&](double t, Side) {
      const Vec vd = gc.basis * gc.analytic.at(t);
      return vd;
    });
    LQProblem q = p;
    q.x0 = p.x0 + a.jumps.jump0;
    const auto tr = simulate_lq(q, u);
    EXPECT_LT((tr.final_state() - (*p.xT - a.jumps.jumpT)).norm(), 1e-5);
    if (p.Q.norm() == 0) {
      EXPECT_NEAR(tr.cost, a.solution.cost_reduced, 1e-5 * (1 + a.solution.cost_reduced));
    }
  }
}

TEST(GeneralizedProperty, ScaleCovarianceAndValueSet) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> N;
  for (int trial = 0; trial < 12; ++trial) {
    const Eigen::Index n = 2 + trial % 2;
    const Vec x0 = Vec::NullaryExpr(n, [&] { return N(rng); });
    const Vec xT = Vec::NullaryExpr(n, [&] { return N(rng); });
    const auto p = chain_problem(n, x0, xT, trial % 3 == 0);
    const auto a = analyze(p, {}, 513);
    auto q = p;
    q.x0 *= 2.5;
    *q.xT *= 2.5;
    const auto b = analyze(q, {}, 513);
    EXPECT_EQ(a.exact.sigma, b.exact.sigma);
    for (const auto& [ij, v] : a.jumps.alpha) EXPECT_LT((b.jumps.alpha.at(ij) - 2.5 * v).norm(), 1e-8);
    for (const auto& [ij, v] : a.jumps.beta) EXPECT_LT((b.jumps.beta.at(ij) - 2.5 * v).norm(), 1e-8);
    bool member = a.exact.sigma == 0;
    for (const auto& [v, labels] : sigma_value_set(a.chain.r)) member = member || v == a.exact.sigma;
    EXPECT_TRUE(member) << a.exact.sigma;
    // Generic data occupy the top pair.
    EXPECT_DOUBLE_EQ(a.exact.sigma, a.chain.r - 0.5);
  }
}

TEST(ExpandInBasis, Errors) {
  DesingChain c;
  c.n = 2;
  c.jump_basis = Mat::Zero(2, 2);
  c.jump_basis(0, 0) = c.jump_basis(0, 1) = 1;
  double res = 0;
  try {
    detail::expand_in_basis(c, vec({1, 0}), 1e-7, &res);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::rank_deficient_basis);
  }
  c.jump_basis = Mat::Zero(2, 1);
  c.jump_basis(0, 0) = 1;
  res = 0;
  try {
    detail::expand_in_basis(c, vec({1, 1}), 1e-7, &res);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::residual_too_large);
  }
  res = 0;
  EXPECT_NEAR(detail::expand_in_basis(c, vec({3, 0}), 1e-7, &res)(0), 3, 1e-14);
  c.jump_basis = Mat::Zero(2, 0);
  EXPECT_THROW(detail::expand_in_basis(c, vec({1, 0}), 1e-7, &res), Error);
}

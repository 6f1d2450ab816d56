#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "singulo/reduced_lq.hpp"

using namespace singulo;

namespace {

LQProblem di_problem(const Mat& P) {
  LQProblem p;
  p.A = Mat::Zero(2, 2);
  p.A(0, 1) = 1;
  p.B = Mat::Zero(2, 1);
  p.B(1, 0) = 1;
  p.P = P;
  p.Q = Mat::Zero(1, 2);
  p.R = Mat::Zero(1, 1);
  p.T = 1.0;
  p.x0 = Vec(2);
  p.x0 << 1, 0.5;
  p.xT = Vec(2);
  *p.xT << -0.5, 1;
  return p;
}

ReducedLQ reduced_of(const LQProblem& p) { return make_reduced(run_chain(normalize_controls(p)), p); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-12, std::abs(b)); }

ReducedLQ random_reduced(std::mt19937_64& rng, Eigen::Index n, Eigen::Index k, Eigen::Index q) {
  std::normal_distribution<double> N;
  auto gauss = [&](Eigen::Index r, Eigen::Index c) {
    Mat M(r, c);
    for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = N(rng);
    return M;
  };
  ReducedLQ red;
  red.A = 0.5 * gauss(n, n);
  red.Br = gauss(n, k);
  const Mat L = gauss(n, n);
  red.Qr = 0.2 * gauss(k, n);
  const Mat Lr = gauss(k, k);
  red.Rr = Lr * Lr.transpose() + Mat::Identity(k, k);
  // Keep the running cost convex: P - Q' R^{-1} Q >= 0.
  red.P = L * L.transpose() * 0.3 + red.Qr.transpose() * red.Rr.llt().solve(red.Qr);
  red.P = linalg::symmetrize(red.P);
  red.endpoint_subspace = gauss(n, q);
  red.T = 1.0;
  red.x0 = gauss(n, 1);
  red.xT = Vec(gauss(n, 1));
  return red;
}

}  // namespace

TEST(Reduced, ScalarIntegrator) {
  LQProblem p;
  p.A = Mat::Zero(1, 1);
  p.B = p.P = Mat::Ones(1, 1);
  p.Q = p.R = Mat::Zero(1, 1);
  p.T = 1.0;
  p.x0 = Vec::Constant(1, 2.0);
  p.xT = Vec::Constant(1, -1.0);
  const auto red = reduced_of(p);
  EXPECT_NEAR(red.Br.norm(), 0, 1e-15);
  const auto sol = solve(red, 257);
  const double q = red.Qr(0, 0);
  for (Eigen::Index i = 0; i < sol.v_star.len(); ++i) {
    EXPECT_NEAR(sol.v_star.values(0, i), -q * 2.0, 1e-12);
    EXPECT_NEAR(sol.x_r.values(0, i), 2.0, 1e-12);
  }
  EXPECT_NEAR(sol.cost_reduced, 0, 1e-12);
  // x(T) - xT = 3 absorbed by the jump direction.
  EXPECT_NEAR(sol.endpoint_shift(0) * red.endpoint_subspace(0, 0), 3.0, 1e-10);
}

TEST(Reduced, ZeroDataGivesZeroSolution) {
  auto p = di_problem(Mat::Identity(2, 2));
  p.x0.setZero();
  p.xT->setZero();
  const auto sol = solve(reduced_of(p), 129);
  EXPECT_EQ(sol.v_star.values.norm(), 0);
  EXPECT_EQ(sol.cost_reduced, 0);
}

TEST(Reduced, DoubleIntegratorMatchesDenseQp) {
  Mat Ppos = Mat::Zero(2, 2);
  Ppos(0, 0) = 1;
  for (const Mat& P : {Mat(Mat::Identity(2, 2)), Ppos}) {
    const auto red = reduced_of(di_problem(P));
    const auto sol = solve(red, 4097);
    const auto qp = oracle::dense_qp(red.A, red.Br, red.P, red.Qr, red.Rr, 1.0, red.x0, red.xT,
                                     red.endpoint_subspace, 129, 16);
    if (std::abs(qp.cost) < 1e-12)
      EXPECT_NEAR(sol.cost_reduced, qp.cost, 1e-12);
    else
      EXPECT_LT(rel_err(sol.cost_reduced, qp.cost), 1e-5) << sol.cost_reduced << " vs " << qp.cost;
  }
}

TEST(ReducedProperty, RandomInstancesMatchDenseQp) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 6; ++trial) {
    const Eigen::Index n = 2 + trial % 2, k = 1 + trial % 2, q = trial % 3;
    const auto red = random_reduced(rng, n, k, std::min(q, n));
    const auto sol = solve_finite(red, 4097);
    const auto qp = oracle::dense_qp(red.A, red.Br, red.P, red.Qr, red.Rr, 1.0, red.x0, red.xT,
                                     red.endpoint_subspace, 129, 16);
    EXPECT_LT(rel_err(sol.cost_reduced, qp.cost), 1e-5) << trial << ": " << sol.cost_reduced << " vs " << qp.cost;
    // The discretized optimum cannot beat the continuous one by more than quadrature noise.
    EXPECT_GT(qp.cost, sol.cost_reduced - 1e-8 * (1 + std::abs(qp.cost)));
  }
}

TEST(ReducedProperty, StationarityAndTransversality) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 3, k = 2, q = trial % 3;
    auto red = random_reduced(rng, n, k, q);
    if (trial == 9) red.xT.reset();
    const auto sol = solve_finite(red, 2049);
    const double dt = sol.x_r.dt();
    double stat = 0, costate = 0, scale = 1;
    for (Eigen::Index i = 1; i + 1 < sol.x_r.len(); i += 16) {
      const Vec x = sol.x_r.values.col(i), v = sol.v_star.values.col(i), l = sol.lambda.values.col(i);
      scale = std::max(scale, l.norm());
      stat = std::max(stat, (2 * red.Rr * v + 2 * red.Qr * x - red.Br.transpose() * l).norm());
      const Vec dl = (sol.lambda.values.col(i + 1) - sol.lambda.values.col(i - 1)) / (2 * dt);
      const Vec rhs = -red.A.transpose() * l + 2 * red.P * x + 2 * red.Qr.transpose() * v;
      costate = std::max(costate, (dl - rhs).norm());
    }
    EXPECT_LT(stat, 1e-9 * scale);
    EXPECT_LT(costate, 1e-5 * scale);
    const Vec xT = sol.x_r.values.rightCols(1), lT = sol.lambda.values.rightCols(1);
    const Mat E = red.xT ? linalg::range_basis(red.endpoint_subspace) : Mat::Identity(n, n);
    EXPECT_LT((E.transpose() * lT).norm(), 1e-8 * scale);
    if (red.xT) {
      const Mat C = linalg::complement_basis(E);
      EXPECT_LT((C.transpose() * (xT - *red.xT)).norm(), 1e-8 * (1 + red.xT->norm()));
    }
  }
}

TEST(Reduced, ScaleCovariance) {
  std::mt19937_64 rng(8);
  auto red = random_reduced(rng, 3, 2, 1);
  const auto a = solve_finite(red, 513);
  red.x0 *= 3;
  *red.xT *= 3;
  const auto b = solve_finite(red, 513);
  EXPECT_LT((b.v_star.values - 3 * a.v_star.values).norm(), 1e-9 * (1 + b.v_star.values.norm()));
  EXPECT_LT(rel_err(b.cost_reduced, 9 * a.cost_reduced), 1e-10);
}

TEST(Reduced, LongHorizonIsIllConditioned) {
  ReducedLQ red;
  red.A = Mat::Zero(2, 2);
  red.A(0, 0) = 3;
  red.Br = Mat::Identity(2, 2);
  red.P = Mat::Identity(2, 2);
  red.Qr = Mat::Zero(2, 2);
  red.Rr = Mat::Identity(2, 2);
  red.endpoint_subspace = Mat::Zero(2, 0);
  red.T = 20.0;
  red.x0 = Vec::Ones(2);
  red.xT = Vec::Zero(2);
  try {
    solve_finite(red, 65);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ill_conditioned);
  }
  red.T = 1.0;
  EXPECT_NO_THROW(solve_finite(red, 65));
}

TEST(Reduced, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  const auto red = random_reduced(rng, 3, 2, 1);
  const auto sol = solve_finite(red, 257);
  const double h = 1e-3;
  for (double t0 : {0.0, 0.4}) {
    const Mat D = sol.control_derivatives(t0, 2);
    for (Eigen::Index c = 0; c < 2; ++c) {
      std::vector<double> f;
      for (int i = 0; i < 6; ++i) f.push_back(sol.control_derivative(t0 + i * h, 0)(c));
      const double s = 1 + D.col(0).norm() + D.col(1).norm() + D.col(2).norm();
      EXPECT_NEAR(D(c, 0), f[0], 1e-12 * s);
      EXPECT_NEAR(D(c, 1), oracle::forward_d1(f, h), 1e-7 * s);
      EXPECT_NEAR(D(c, 2), oracle::forward_d2(f, h), 1e-4 * s);
    }
    EXPECT_LT((sol.control_derivative(t0, 1) - D.col(1)).norm(), 1e-12 * (1 + D.norm()));
  }
  // Samples agree with the generator.
  for (Eigen::Index i : {0, 100, 256})
    EXPECT_LT((sol.v_star.values.col(i) - sol.control_derivative(sol.v_star.time(i), 0)).norm(), 1e-10);
}

TEST(Infinite, ScalarRiccati) {
  ReducedLQ red;
  red.A = -Mat::Ones(1, 1);
  red.Br = Mat::Ones(1, 1);
  red.P = Mat::Ones(1, 1);
  red.Qr = Mat::Zero(1, 1);
  red.Rr = Mat::Ones(1, 1);
  red.endpoint_subspace = Mat::Zero(1, 0);
  red.x0 = Vec::Ones(1);
  const auto sol = solve(red);
  ASSERT_TRUE(sol.infinite);
  const double pi = std::sqrt(2.0) - 1;
  EXPECT_NEAR(sol.riccati(0, 0), pi, 1e-12);
  EXPECT_NEAR(sol.feedback(0, 0), pi, 1e-12);
  EXPECT_NEAR(sol.cost_reduced, pi, 1e-12);
  EXPECT_NEAR(detail::running_cost_integral(red, sol), pi, 1e-6);
}

TEST(Infinite, NotStabilizable) {
  ReducedLQ red;
  red.A = Mat::Ones(1, 1);
  red.Br = Mat::Zero(1, 1);
  red.P = Mat::Ones(1, 1);
  red.Qr = Mat::Zero(1, 1);
  red.Rr = Mat::Ones(1, 1);
  red.x0 = Vec::Ones(1);
  try {
    solve_infinite(red);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::not_stabilizable);
  }
}

TEST(InfiniteProperty, ClosedLoopStableAndCostConsistent) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto red = random_reduced(rng, 3, 2, 0);
    red.T.reset();
    red.xT.reset();
    red.P += 0.1 * Mat::Identity(3, 3);
    const auto sol = solve_infinite(red);
    const Mat Acl = red.A - red.Br * sol.feedback;
    Eigen::EigenSolver<Mat> es(Acl, false);
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_LT(es.eigenvalues()(i).real(), 0);
    const double J = detail::running_cost_integral(red, sol);
    EXPECT_LT(rel_err(J, sol.cost_reduced), 1e-5) << J << " vs " << sol.cost_reduced;
    // lambda = -2 Pi x along the trajectory.
    EXPECT_LT((sol.lambda.values + 2 * sol.riccati * sol.x_r.values).norm(), 1e-10 * (1 + sol.lambda.values.norm()));
  }
}

TEST(Extrapolate, QuadraticConvergence) {
  std::vector<double> etas{0.1, 0.05, 0.025, 0.0125}, J;
  for (double e : etas) J.push_back(1 + e * e);
  const auto est = extrapolate_limit(etas, J);
  EXPECT_NEAR(est.estimate, 1, 1e-12);
  EXPECT_NEAR(est.order, 2, 1e-9);
  // Order does not depend on listing order.
  std::vector<double> re{0.025, 0.1, 0.0125, 0.05}, rJ;
  for (double e : re) rJ.push_back(1 + e * e);
  EXPECT_NEAR(extrapolate_limit(re, rJ).estimate, 1, 1e-12);
}

TEST(Extrapolate, ConstantAndErrors) {
  EXPECT_EQ(extrapolate_limit({0.1, 0.05, 0.025}, {2, 2, 2}).estimate, 2);
  EXPECT_EQ(extrapolate_limit({0.1}, {3}).estimate, 3);
  EXPECT_THROW(extrapolate_limit({0.1, 0.05}, {1}), Error);
  try {
    extrapolate_limit({0.1, 0.05, 0.025, 0.0125}, {1, 2, 1, 2}, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_convergent);
  }
}

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "singulo/expr.hpp"
#include "singulo/io.hpp"
#include "singulo/lq_model.hpp"
#include "singulo/signal.hpp"

using namespace singulo;

namespace {

LQProblem scalar_problem() {
  LQProblem p;
  p.A = Mat::Zero(1, 1);
  p.B = Mat::Ones(1, 1);
  p.P = Mat::Ones(1, 1);
  p.Q = Mat::Zero(1, 1);
  p.R = Mat::Zero(1, 1);
  p.T = 1.0;
  p.x0 = Vec::Ones(1);
  p.xT = Vec::Ones(1);
  return p;
}

LQProblem two_input_problem(const Mat& R) {
  LQProblem p;
  p.A = Mat::Identity(2, 2);
  p.B = Mat::Identity(2, 2);
  p.P = Mat::Identity(2, 2);
  p.Q = Mat::Zero(2, 2);
  p.R = R;
  p.T = 1.0;
  p.x0 = Vec::Ones(2);
  return p;
}

}  // namespace

TEST(Validate, ScalarInstanceIsValid) { EXPECT_TRUE(validate(scalar_problem()).empty()); }

TEST(Validate, NegativeEigenvalueOfR) {
  Mat R(2, 2);
  R << 1, 0, 0, -1;
  const auto issues = validate(two_input_problem(R));
  ASSERT_FALSE(issues.empty());
  EXPECT_EQ(issues.front(), "R not PSD");
}

TEST(Validate, DimensionMismatch) {
  LQProblem p = scalar_problem();
  p.A = Mat::Zero(3, 3);
  p.B = Mat::Ones(2, 1);
  const auto issues = validate(p);
  ASSERT_FALSE(issues.empty());
  EXPECT_EQ(issues.front(), "dimension mismatch");
}

TEST(Normalize, AlreadyNormalized) {
  Mat R = Mat::Zero(2, 2);
  R(0, 0) = 1;
  const auto nz = normalize_controls(two_input_problem(R));
  EXPECT_EQ(nz.k0, 1);
  EXPECT_NEAR((nz.S - Mat::Identity(2, 2)).norm(), 0, 1e-12);
  EXPECT_NEAR(nz.R00(0, 0), 1, 1e-12);
}

TEST(Normalize, CoordinateSwap) {
  Mat R = Mat::Zero(2, 2);
  R(1, 1) = 2;
  const auto nz = normalize_controls(two_input_problem(R));
  EXPECT_EQ(nz.k0, 1);
  EXPECT_NEAR(nz.R00(0, 0), 2, 1e-12);
  EXPECT_NEAR(std::abs(nz.S(1, 0)), 1, 1e-12);
  EXPECT_NEAR(std::abs(nz.S(0, 1)), 1, 1e-12);
  EXPECT_NEAR(nz.S(0, 0), 0, 1e-12);
}

TEST(Normalize, FullySingular) {
  const auto p = two_input_problem(Mat::Zero(2, 2));
  const auto nz = normalize_controls(p);
  EXPECT_EQ(nz.k0, 0);
  EXPECT_NEAR((nz.S - Mat::Identity(2, 2)).norm(), 0, 1e-12);
  EXPECT_NEAR((nz.B01 - p.B).norm(), 0, 1e-12);
  EXPECT_NEAR((nz.Q01 - p.Q).norm(), 0, 1e-12);
}

TEST(NormalizeProperty, BasisIndependenceAndReconstruction) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> N;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index k = 2 + trial % 3, n = 3;
    Mat L = Mat::Zero(k, k);
    const Eigen::Index rank = trial % static_cast<int>(k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < rank; ++j) L(i, j) = N(rng);
    LQProblem p;
    p.A = Mat::Random(n, n);
    p.B = Mat::Random(n, k);
    p.P = Mat::Identity(n, n);
    p.Q = Mat::Random(k, n);
    p.R = L * L.transpose();
    p.T = 1.0;
    p.x0 = Vec::Ones(n);
    const auto a = normalize_controls(p);
    const Mat U = oracle::random_orthogonal(k, rng);
    LQProblem q = p;
    q.B = p.B * U;
    q.Q = U.transpose() * p.Q;
    q.R = linalg::symmetrize(U.transpose() * p.R * U);
    const auto b = normalize_controls(q);
    ASSERT_EQ(a.k0, b.k0);
    if (a.k0) {
      Eigen::SelfAdjointEigenSolver<Mat> ea(a.R00), eb(b.R00);
      EXPECT_LE((ea.eigenvalues() - eb.eigenvalues()).norm(), 1e-10 * (1 + ea.eigenvalues().maxCoeff()));
    }
    const double lmax = a.k0 ? a.R00.maxCoeff() : 0.0;
    Mat D = Mat::Zero(k, k);
    D.topLeftCorner(a.k0, a.k0) = a.R00;
    EXPECT_LE((a.S.transpose() * p.R * a.S - D).norm(), 1e-10 * (1 + lmax));
    EXPECT_LE((a.S.transpose() * a.S - Mat::Identity(k, k)).norm(), 1e-12);
  }
}

TEST(ProblemJson, ParsesAndDefaults) {
  const auto j = nlohmann::json::parse(R"({"A":[[0]],"B":[[1]],"P":[[1]],"T":"inf","x0":[2]})");
  const LQProblem p = problem_from_json(j);
  EXPECT_FALSE(p.T.has_value());
  EXPECT_FALSE(p.xT.has_value());
  EXPECT_EQ(p.Q.rows(), 1);
  EXPECT_EQ(p.R(0, 0), 0);
  EXPECT_EQ(p.x0(0), 2);
}

TEST(ProblemJson, ErrorsNameTheKey) {
  try {
    problem_from_json(nlohmann::json::parse(R"({"A":[[0]],"B":[[1]],"P":[["x"]],"T":1,"x0":[1]})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse_error);
    EXPECT_NE(std::string(e.what()).find("'P'"), std::string::npos);
  }
  try {
    problem_from_json(nlohmann::json::parse(R"({"A":[[0]],"B":[[1]],"P":[[1]],"x0":[1]})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'T'"), std::string::npos);
  }
}

TEST(ProblemJson, SymmetrizesWithWarning) {
  std::vector<std::string> warnings;
  const auto p = problem_from_json(
      nlohmann::json::parse(R"({"A":[[0,0],[0,0]],"B":[[1],[0]],"P":[[1,0.5],[0,1]],"T":1,"x0":[1,0]})"),
      &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_DOUBLE_EQ(p.P(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(p.P(1, 0), 0.25);
}

TEST(Primitive, TrapezoidExactOnConstantAndLinear) {
  const auto one = SampledSignal::sample(1, 1001, 1.0, [](double) { return Vec::Ones(1); });
  const auto lin = SampledSignal::sample(1, 1001, 1.0, [](double t) { return Vec::Constant(1, t); });
  const auto P1 = primitive(one), P2 = primitive(lin);
  for (Eigen::Index i = 0; i < 1001; ++i) {
    const double t = P1.time(i);
    EXPECT_NEAR(P1.values(0, i), t, 1e-12);
    EXPECT_NEAR(P2.values(0, i), t * t / 2, 1e-12);
  }
  EXPECT_EQ(primitive(SampledSignal::zeros(2, 11, 1.0)).values.norm(), 0);
}

TEST(Norms, BasicValues) {
  EXPECT_EQ(l2_norm(SampledSignal::zeros(1, 65, 1.0)), 0);
  EXPECT_NEAR(l2_norm(SampledSignal::sample(1, 65, 1.0, [](double) { return Vec::Ones(1); })), 1, 1e-14);
  const double eta = 1.0 / 16;
  // Box of height 1/eta on [0, eta] sampled on a grid whose node eta stores the mean value.
  const auto box = SampledSignal::sample(1, 4097, 1.0, [&](double t) {
    return Vec::Constant(1, t < eta - 1e-15 ? 1 / eta : (std::abs(t - eta) < 1e-15 ? 0.5 / eta : 0.0));
  });
  EXPECT_NEAR(l2_norm_sq(box) * eta, 1, 0.02);
}

TEST(Simpson, OddCellCountUsesThreeEighthsPanel) {
  for (Eigen::Index len : {4, 6, 8, 10}) {
    const auto cube = SampledSignal::sample(1, len, 2.0, [](double t) { return Vec::Constant(1, t * t * t); });
    EXPECT_NEAR(integrate(cube), 4.0, 1e-12) << len;
  }
}

TEST(CellControl, SimpsonExactForPiecewiseLinear) {
  const auto u = CellControl::from_function(uniform_nodes(1.0, 3), 1, [](double t, Side) {
    return Vec::Constant(1, 2 * t - 1);
  });
  EXPECT_NEAR(u.l2_norm_sq(), 1.0 / 3, 1e-14);
}

TEST(Expr, EvaluatesPolynomials) {
  Vec x(3);
  x << 2, -1, 0.5;
  EXPECT_DOUBLE_EQ(Polynomial::parse("x1^2 - 3*x2 + 4", 3)(x), 11);
  EXPECT_DOUBLE_EQ(Polynomial::parse("-(x1 + x3)*x2", 3)(x), 2.5);
  EXPECT_DOUBLE_EQ(Polynomial::parse("2.5e-1", 3)(x), 0.25);
  EXPECT_DOUBLE_EQ(Polynomial::parse("x1^0", 3)(x), 1);
  EXPECT_FALSE(Polynomial::parse("3", 3).depends_on_state());
}

TEST(Expr, RejectsMalformedInput) {
  for (const char* s : {"x4", "x1 +", "sin(x1)", "x1^-1", "(x1", "x1 x2", "x"}) {
    try {
      Polynomial::parse(s, 3);
      FAIL() << s;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::parse_error) << s;
    }
  }
}

TEST(Expr, UserSystem) {
  const auto sys = system_from_json(
      nlohmann::json::parse(R"({"f":["x2","-x1"],"G":[["0"],["1"]],"flavor":"constant_g"})"));
  Vec x(2);
  x << 1, 2;
  EXPECT_DOUBLE_EQ(sys.f(x)(0), 2);
  EXPECT_DOUBLE_EQ(sys.f(x)(1), -1);
  EXPECT_DOUBLE_EQ(sys.G(x)(1, 0), 1);
  EXPECT_THROW(system_from_json(nlohmann::json::parse(R"({"f":["x1"],"G":[["x1"]],"flavor":"constant_g"})")),
               Error);
  EXPECT_THROW(system_from_json(nlohmann::json::parse(R"({"f":["x1"],"G":[["1"]],"flavor":"driftless"})")), Error);
}

TEST(Io, ShortestRoundTripFormatting) {
  EXPECT_EQ(io::format_double(0.1), "0.1");
  EXPECT_EQ(io::format_double(1e-20), "1e-20");
  EXPECT_EQ(io::format_double(-2), "-2");
  EXPECT_EQ(std::stod(io::format_double(1.0 / 3)), 1.0 / 3);
}

TEST(Io, Fnv1aReferenceValues) {
  EXPECT_EQ(io::hex64(io::fnv1a("")), "cbf29ce484222325");
  EXPECT_EQ(io::hex64(io::fnv1a("a")), "af63dc4c8601ec8c");
}

TEST(Io, CsvLayout) {
  io::Csv csv("cmd", "cfg", {"a", "b"});
  csv.row({1.5, 2.0});
  EXPECT_EQ(csv.str(), "# singulo cmd config=" + io::hex64(io::fnv1a("cfg")) + "\na,b\n1.5,2\n");
}

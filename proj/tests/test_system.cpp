#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "support.hpp"

using namespace eqfree;
using namespace testing_support;

TEST(DtSystem, RejectsMalformedDefinitions) {
  VarSpace vs{{"x"}, {"w"}, 1};
  const auto n = vs.names();
  EXPECT_THROW(DtSystem(vs, {}, {parse("x", n)}), Error);
  EXPECT_THROW(DtSystem(vs, {parse("x", n)}, {}), Error);
  // Variable index beyond (x, w).
  EXPECT_THROW(DtSystem(vs, {node::variable(2)}, {parse("x", n)}), Error);
  EXPECT_THROW((VarSpace{{"x"}, {"x"}, 1}.validate()), Error);
  EXPECT_THROW((VarSpace{{}, {"w"}, 1}.validate()), Error);
  DtSystem sys(vs, {parse("0.5*x + w", n)}, {parse("x", n)});
  EXPECT_THROW(sys.next_state(VectorXd::Zero(2), VectorXd::Zero(1)), Error);
}

TEST(Rk4, MatchesHandWrittenStep) {
  const DtSystem sys = duffing();
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Eigen::Vector2d x(u(rng), u(rng));
    const double w = u(rng);
    const VectorXd got = sys.next_state(x, VectorXd::Constant(1, w));
    const Eigen::Vector2d want = duffing_rk4(x, w, 0.01);
    EXPECT_LE((got - want).norm(), 1e-14);
    EXPECT_DOUBLE_EQ(sys.output(x, VectorXd::Constant(1, w))(0), x(0));
  }
}

TEST(Rk4, FourthOrderGlobalConvergence) {
  // dx/dt = -x + x^2/4 with known solution; the error ratio for halved steps tends to 16.
  VarSpace vs{{"x"}, {"w"}, 1};
  const auto n = vs.names();
  CtSystem ct{vs, {parse("-x + 0.25*x^2 + 0*w", n)}, {parse("x", n)}};
  auto exact = [](double t) {  // logistic-type solution with x(0) = 1
    return 1.0 / (0.25 + 0.75 * std::exp(t));
  };
  auto err = [&](int steps) {
    DtSystem sys = rk4_discretize(ct, 1.0 / steps);
    auto tr = simulate(sys, VectorXd::Constant(1, 1.0), constant_input(VectorXd::Zero(1), steps), steps);
    return std::abs(tr.x.back()(0) - exact(1.0));
  };
  const double e1 = err(10), e2 = err(20), e3 = err(40);
  EXPECT_NEAR(std::log2(e1 / e2), 4.0, 0.15);
  EXPECT_NEAR(std::log2(e2 / e3), 4.0, 0.1);
  EXPECT_THROW(rk4_discretize(ct, 0.0), Error);
}

TEST(Jacobians, AgreeWithCentralDifferences) {
  const DtSystem sys = duffing();
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    VectorXd x(2), w(1);
    x << u(rng), u(rng);
    w << u(rng);
    const FormMatrices fm = eval_forms(sys, x, w);
    const double h = 1e-6;
    for (int j = 0; j < 2; ++j) {
      VectorXd e = VectorXd::Unit(2, j) * h;
      VectorXd col = (sys.next_state(x + e, w) - sys.next_state(x - e, w)) / (2 * h);
      EXPECT_LE((fm.A.col(j) - col).norm(), 1e-8);
    }
    VectorXd colb = (sys.next_state(x, w + VectorXd::Constant(1, h)) - sys.next_state(x, w - VectorXd::Constant(1, h))) / (2 * h);
    EXPECT_LE((fm.B.col(0) - colb).norm(), 1e-8);
    EXPECT_DOUBLE_EQ(fm.C(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(fm.C(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(fm.D(0, 0), 0.0);
  }
}

TEST(Simulate, LengthsAndDivergence) {
  VarSpace vs{{"x"}, {"w"}, 1};
  const auto n = vs.names();
  DtSystem stable(vs, {parse("0.5*x + w", n)}, {parse("2*x", n)});
  auto tr = simulate(stable, VectorXd::Constant(1, 1.0), constant_input(VectorXd::Zero(1), 5), 5);
  ASSERT_EQ(tr.x.size(), 6u);
  ASSERT_EQ(tr.w.size(), 5u);
  ASSERT_EQ(tr.z.size(), 5u);
  EXPECT_DOUBLE_EQ(tr.x[5](0), std::pow(0.5, 5));
  EXPECT_DOUBLE_EQ(tr.z[1](0), 1.0);
  EXPECT_THROW(simulate(stable, VectorXd::Constant(1, 1.0), constant_input(VectorXd::Zero(1), 3), 5), Error);

  DtSystem unstable(vs, {parse("10*x + w", n)}, {parse("x", n)});
  try {
    simulate(unstable, VectorXd::Constant(1, 1.0), constant_input(VectorXd::Zero(1), 100), 100);
    FAIL();
  } catch (const SimulationDiverged& e) {
    EXPECT_GT(e.time_index(), 5);
    EXPECT_LT(e.time_index(), 20);
  }
}

TEST(Simulate, DuffingAtRestStaysAtRest) {
  auto tr = simulate(duffing(), VectorXd::Zero(2), constant_input(VectorXd::Zero(1), 100), 100);
  for (const auto& x : tr.x) EXPECT_EQ(x.norm(), 0.0);
}

TEST(Equilibrium, DuffingForcedEquilibriumMatchesCubicRoot) {
  const DtSystem sys = duffing();
  for (double ws : {-1.0, -0.3, 0.0, 0.5, 1.0}) {
    // 8 x + 10 x^3 = w*, x2 = 0; monotone cubic solved by bisection.
    double lo = -1.0, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
      double mid = 0.5 * (lo + hi);
      (8 * mid + 10 * mid * mid * mid < ws ? lo : hi) = mid;
    }
    const Equilibrium eq = find_equilibrium(sys, VectorXd::Constant(1, ws), Eigen::Vector2d(0.3, -0.2));
    EXPECT_NEAR(eq.x(0), 0.5 * (lo + hi), 1e-9);
    EXPECT_NEAR(eq.x(1), 0.0, 1e-9);
    EXPECT_LT(eq.residual, 1e-10);
    EXPECT_TRUE(eq.jacobian_nonsingular);
    EXPECT_DOUBLE_EQ(eq.z(0), eq.x(0));
  }
}

TEST(Equilibrium, ReportsFailureAndSingularJacobian) {
  VarSpace vs{{"x"}, {"w"}, 1};
  const auto n = vs.names();
  DtSystem drift(vs, {parse("x + 1 + 0*w", n)}, {parse("x", n)});
  EXPECT_THROW(find_equilibrium(drift, VectorXd::Zero(1), VectorXd::Zero(1)), EquilibriumNotFound);
  // x+ = x - x^3: equilibrium 0 with f'(0) - 1 = 0.
  DtSystem flat(vs, {parse("x - x^3 + 0*w", n)}, {parse("x", n)});
  const Equilibrium eq = find_equilibrium(flat, VectorXd::Zero(1), VectorXd::Zero(1));
  EXPECT_FALSE(eq.jacobian_nonsingular);
}

TEST(Increments, ForwardDifferenceLengths) {
  VarSpace vs{{"x"}, {"w"}, 1};
  const auto n = vs.names();
  DtSystem sys(vs, {parse("0.5*x + w", n)}, {parse("x", n)});
  std::vector<VectorXd> w;
  for (int k = 0; k < 4; ++k) w.push_back(VectorXd::Constant(1, k));
  auto tr = simulate(sys, VectorXd::Zero(1), w, 4);
  Increments inc = forward_difference(tr);
  EXPECT_EQ(inc.dx.size(), 4u);
  EXPECT_EQ(inc.dw.size(), 3u);
  EXPECT_EQ(inc.dz.size(), 3u);
  EXPECT_DOUBLE_EQ(inc.dw[2](0), 1.0);
}

TEST(TrajectoryCsv, HeaderAndFinalRow) {
  VarSpace vs{{"a", "b"}, {"u"}, 1};
  const auto n = vs.names();
  DtSystem sys(vs, {parse("0.1*a", n), parse("b + u", n)}, {parse("a + b", n)});
  auto tr = simulate(sys, Eigen::Vector2d(1.0, 0.0), constant_input(VectorXd::Constant(1, 0.1), 2), 2);
  std::ostringstream os;
  write_csv(os, tr);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,x1,x2,w1,z1");
  std::getline(in, line);
  EXPECT_EQ(line, "0,1,0,0.10000000000000001,1");
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 2), "2,");
  EXPECT_EQ(line.substr(line.size() - 2), ",,");
}

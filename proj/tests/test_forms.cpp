#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace eqfree;
using namespace testing_support;

TEST(GaussLegendre, ExactForPolynomialsUpToDegree2nMinus1) {
  for (int n = 1; n <= 12; ++n) {
    auto [x, w] = gauss_legendre(n);
    double sw = 0.0;
    for (double v : w) sw += v;
    EXPECT_NEAR(sw, 1.0, 1e-14);
    for (int deg = 0; deg <= 2 * n - 1; ++deg) {
      double q = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) q += w[i] * std::pow(x[i], deg);
      EXPECT_NEAR(q, 1.0 / (deg + 1), 1e-13) << "n=" << n << " deg=" << deg;
    }
    for (double v : x) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
  auto [x1, w1] = gauss_legendre(1);
  EXPECT_DOUBLE_EQ(x1[0], 0.5);
  EXPECT_THROW(gauss_legendre(0), Error);
}

TEST(IntegralForms, CubicClosedForm) {
  // f(x) = x^3: the mean Jacobian on [x, x+] is x+^2 + x+ x + x^2.
  VarSpace vs{{"x"}, {"w"}, 1};
  const auto n = vs.names();
  DtSystem sys(vs, {parse("x^3 + w", n)}, {parse("x^2", n)});
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng);
    auto f = eval_integral_forms(sys, VectorXd::Constant(1, b), VectorXd::Constant(1, 0.3), VectorXd::Constant(1, a),
                                 VectorXd::Constant(1, -0.1), 2);
    EXPECT_NEAR(f.A(0, 0), b * b + a * b + a * a, 1e-12);
    EXPECT_NEAR(f.B(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(f.C(0, 0), a + b, 1e-12);
    EXPECT_EQ(f.nodes, 2);
  }
}

TEST(IntegralForms, LinearSystemGivesConstantMatrices) {
  MatrixXd A(2, 2), B(2, 1), C(1, 2), D(1, 1);
  A << 0.5, 0.1, -0.2, 0.3;
  B << 1, 0.5;
  C << 1, -1;
  D << 0.25;
  DtSystem sys = lti(A, B, C, D);
  auto f = eval_integral_forms(sys, Eigen::Vector2d(1, 2), VectorXd::Constant(1, 3), Eigen::Vector2d(-1, 0),
                               VectorXd::Constant(1, 0));
  EXPECT_LE((f.A - A).norm(), 1e-14);
  EXPECT_LE((f.B - B).norm(), 1e-14);
  EXPECT_LE((f.C - C).norm(), 1e-14);
  EXPECT_LE((f.D - D).norm(), 1e-14);
  EXPECT_THROW(eval_integral_forms(sys, Eigen::Vector2d(1, 2), VectorXd::Constant(1, 3), Eigen::Vector2d(-1, 0),
                                   VectorXd::Constant(1, 0), 1),
               Error);
}

TEST(VelocityForm, ResidualSmallOnRandomDuffingSegments) {
  const DtSystem sys = duffing();
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    VectorXd x(2), w(1), w1(1);
    x << u(rng), u(rng);
    w << u(rng);
    w1 << u(rng);
    const VectorXd xn = sys.next_state(x, w);
    worst = std::max(worst, velocity_residual(sys, xn, w1, x, w));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(VelocityForm, ZeroSegmentReducesToPointJacobian) {
  const DtSystem sys = duffing();
  VectorXd x(2), w(1);
  x << 0.4, -0.3;
  w << 0.2;
  auto f = eval_integral_forms(sys, x, w, x, w);
  auto g = eval_forms(sys, x, w);
  EXPECT_LE((f.A - g.A).norm(), 1e-14);
  EXPECT_LE((f.B - g.B).norm(), 1e-14);
  EXPECT_EQ(velocity_residual(sys, x, w, x, w), 0.0);
}

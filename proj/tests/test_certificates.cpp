#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "support.hpp"

using namespace eqfree;
using namespace testing_support;

namespace {

MatrixXd m1(double v) { return MatrixXd::Constant(1, 1, v); }

DtSystem scalar(const std::string& f, const std::string& h = "x") {
  VarSpace vs{{"x"}, {"w"}, 1};
  const auto n = vs.names();
  return DtSystem(vs, {parse(f, n)}, {parse(h, n)});
}

}  // namespace

TEST(ShiftedLyapunovTest, LinearSystemIsQuadratic) {
  auto V = shifted_lyapunov(scalar("0.5*x + w"), m1(1.0), VectorXd::Zero(1));
  for (double x : {-2.0, -0.3, 0.0, 1.1}) EXPECT_NEAR(V(VectorXd::Constant(1, x)), 0.25 * x * x, 1e-15);
  // A nonzero w* shifts the minimum to the forced equilibrium x = 2 w*.
  auto Vs = shifted_lyapunov(scalar("0.5*x + w"), m1(1.0), VectorXd::Constant(1, 0.4));
  EXPECT_NEAR(Vs(VectorXd::Constant(1, 0.8)), 0.0, 1e-15);
  EXPECT_THROW(shifted_lyapunov(scalar("0.5*x + w"), m1(-1.0), VectorXd::Zero(1)), Error);
  EXPECT_THROW(shifted_lyapunov(scalar("0.5*x + w"), m1(1.0), VectorXd::Zero(2)), Error);
  EXPECT_THROW(shifted_lyapunov(scalar("0.5*x + w"), MatrixXd::Identity(2, 2), VectorXd::Zero(1)), Error);
}

TEST(SupplyStability, SignOfR) {
  EXPECT_TRUE(check_supply_stability(QSRSupply::l2_gain(1.0, 1, 2)));
  EXPECT_TRUE(check_supply_stability(QSRSupply::l2_gain(1.0, 1, 2), true));
  EXPECT_TRUE(check_supply_stability(QSRSupply::passivity(2)));
  EXPECT_FALSE(check_supply_stability(QSRSupply::passivity(2), true));
  MatrixXd R(2, 2);
  R << -1, 0, 0, 0.1;
  EXPECT_FALSE(check_supply_stability(QSRSupply(m1(1.0), MatrixXd::Zero(1, 2), R)));
}

TEST(LevelSet, ScalarQuadratics) {
  // f(x) - x = x gives V = x^2; the boundary of [-1, 1] gives level 1.
  auto a = level_set_fit(shifted_lyapunov(scalar("2*x + w"), m1(1.0), VectorXd::Zero(1)), Box::cube(1, -1, 1));
  EXPECT_DOUBLE_EQ(a.level, 1.0);
  auto b = level_set_fit(shifted_lyapunov(scalar("0.5*x + w"), m1(1.0), VectorXd::Zero(1)), Box::cube(1, -2, 2));
  EXPECT_DOUBLE_EQ(b.level, 1.0);
  EXPECT_TRUE(b.contains(VectorXd::Constant(1, 1.9)));
  EXPECT_FALSE(b.contains(VectorXd::Constant(1, 2.1)));
  EXPECT_THROW(level_set_fit(shifted_lyapunov(scalar("x + 0*w"), m1(1.0), VectorXd::Zero(1)), Box::cube(1, -1, 1)),
               DegenerateLevelSet);
  EXPECT_THROW(level_set_fit(b.lyap, Box::cube(2, -1, 1)), Error);
}

TEST(LevelSet, BoundarySamplesCoverEveryFace) {
  const Box box(Eigen::Vector3d(-1, 0, 2), Eigen::Vector3d(1, 1, 5));
  auto pts = boundary_samples(box, 25);
  EXPECT_EQ(pts.size(), 6u * 25u);
  int on_face[6] = {0, 0, 0, 0, 0, 0};
  for (const auto& x : pts) {
    EXPECT_TRUE(box.contains(x));
    for (int d = 0; d < 3; ++d) {
      on_face[2 * d] += x(d) == box.lo(d);
      on_face[2 * d + 1] += x(d) == box.hi(d);
    }
  }
  for (int f : on_face) EXPECT_GE(f, 25);
}

TEST(LevelSet, TwoDimensionalQuadraticMatchesAnalyticMinimum) {
  // V(x) = x' diag(1, 4) x / 4 on [-1, 1]^2 has boundary minimum 1/4 at (+-1, 0).
  VarSpace vs{{"x1", "x2"}, {"w"}, 1};
  const auto n = vs.names();
  DtSystem sys(vs, {parse("0.5*x1 + w", n), parse("0.5*x2", n)}, {parse("x1", n)});
  MatrixXd M0 = Eigen::Vector2d(1.0, 4.0).asDiagonal();
  auto set = level_set_fit(shifted_lyapunov(sys, M0, VectorXd::Zero(1)), Box::cube(2, -1, 1), 201);
  EXPECT_NEAR(set.level, 0.25, 1e-12);
}

TEST(ShiftedCertificate, DuffingLevelSetIsForwardInvariant) {
  AnalysisConfig cfg = load_config(std::string(EQFREE_CONFIG_DIR) + "/duffing-shifted.json");
  std::ostringstream log;
  AnalyzeResult res = run_analysis(cfg, log);
  ASSERT_EQ(res.certificate.status, CertStatus::Feasible);
  const DtSystem sys = make_system(cfg.system);
  const MatrixXd X = res.certificate.storage_metric(VectorXd::Zero(3));
  auto set = level_set_fit(shifted_lyapunov(sys, X, VectorXd::Zero(1)), Box::cube(2, -1, 1));
  EXPECT_NEAR(set.level, res.document["level_set"].get<double>(), 1e-12);

  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int runs = 0;
  while (runs < 50) {
    VectorXd x(2);
    x << u(rng), u(rng);
    if (!set.contains(x)) continue;
    ++runs;
    double prev = set.lyap(x);
    for (int k = 0; k < 300; ++k) {
      x = sys.next_state(x, VectorXd::Zero(1));
      const double v = set.lyap(x);
      EXPECT_LE(v, prev * (1 + 1e-12) + 1e-15);
      EXPECT_TRUE(set.contains(x));
      EXPECT_LE(x.cwiseAbs().maxCoeff(), 1.0);
      prev = v;
    }
  }
}

TEST(Tube, MembershipAgainstReference) {
  InvariantTube tube;
  tube.reference = {VectorXd::Zero(1), VectorXd::Constant(1, 1.0), VectorXd::Constant(1, 2.0)};
  tube.storage = [](const VectorXd& x, const VectorXd& r) { return (x - r).squaredNorm(); };
  tube.level = 0.25;
  EXPECT_TRUE(tube_membership(tube, VectorXd::Constant(1, 1.4), 1));
  EXPECT_FALSE(tube_membership(tube, VectorXd::Constant(1, 1.6), 1));
  EXPECT_TRUE(tube_membership(tube, VectorXd::Constant(1, 2.0), 2));
  EXPECT_THROW(tube_membership(tube, VectorXd::Zero(1), 3), Error);
  EXPECT_THROW(tube_membership(tube, VectorXd::Zero(1), -1), Error);
}

TEST(Alpha, ScalarLinearValue) {
  // q = (a - 1) d and Cd = d give alpha = 1 / (1 - a)^2.
  const DtSystem sys = scalar("0.5*x + 0*w");
  AlphaEstimate e = estimate_alpha(sys, m1(0.0), m1(1.0), m1(-1.0), Box::cube(1, -1, 1), Box::cube(1, -0.5, 0.5), 11);
  EXPECT_NEAR(e.alpha, 4.0, 1e-12);
  EXPECT_GT(e.pairs, 100u);
}

TEST(Alpha, NonlinearScalarMatchesClosedForm) {
  const DtSystem sys = scalar("0.5*x - 0.1*x^3 + 0*w");
  const Box xr = Box::cube(1, -1, 1), sr = Box::cube(1, -0.5, 0.5);
  AlphaEstimate e = estimate_alpha(sys, m1(0.0), m1(1.0), m1(-2.0), xr, sr, 21);
  double want = 0.0;
  Grid gx(xr, 21), gs(sr, 21);
  for (std::size_t i = 0; i < gx.size(); ++i)
    for (std::size_t k = 0; k < gs.size(); ++k) {
      const double x = gx.point(i)(0), s = gs.point(k)(0);
      if (x == s) continue;
      const double abar = 0.5 - 0.1 * (x * x + x * s + s * s);
      want = std::max(want, 1.0 / ((abar - 1) * (abar - 1)));
    }
  EXPECT_NEAR(e.alpha, want, 1e-10 * want);
}

TEST(Alpha, RejectsUnsupportedStructure) {
  const DtSystem sys = scalar("0.5*x + w");
  const Box b = Box::cube(1, -1, 1);
  EXPECT_THROW(estimate_alpha(sys, m1(1.0), m1(1.0), m1(-1.0), b, b), Error);   // CB != 0
  EXPECT_THROW(estimate_alpha(sys, m1(0.0), m1(1.0), m1(-1.0), b, b), Error);   // B does not match f
  EXPECT_THROW(estimate_alpha(scalar("0.5*x + 0*w"), m1(0.0), m1(1.0), m1(1.0), b, b), Error);  // R > 0
  EXPECT_THROW(estimate_alpha(scalar("0.5*x + 0*w", "x + w"), m1(0.0), m1(1.0), m1(-1.0), b, b), Error);
  EXPECT_DOUBLE_EQ(estimate_alpha(scalar("0.5*x + 0*w"), m1(0.0), m1(1.0), m1(0.0), b, b).alpha, 1.0);
  // x+ = x leaves C(Abar - I)d = 0 while Cd != 0.
  EXPECT_THROW(estimate_alpha(scalar("x + 0*w"), m1(0.0), m1(1.0), m1(-1.0), b, b), Error);
}

TEST(UspBoundTest, IdentitiesAndHomogeneity) {
  UspBound b = usp_bound(4.0, 1.0, 2.0);
  EXPECT_DOUBLE_EQ(b.gamma_tilde, 4.0);
  EXPECT_DOUBLE_EQ(usp_bound(1.0, 1.0, 0.3).gamma_tilde, 0.3);
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int i = 0; i < 50; ++i) {
    const double a = u(rng), be = u(rng), g = u(rng), k = u(rng);
    const double base = usp_bound(a, be, g).gamma_tilde;
    EXPECT_NEAR(usp_bound(a, be, k * g).gamma_tilde, k * base, 1e-12 * k * base);
    EXPECT_NEAR(usp_bound(a, k * be, g).gamma_tilde, k * base, 1e-12 * k * base);
    EXPECT_NEAR(usp_bound(k * k * a, be, g).gamma_tilde, k * base, 1e-12 * k * base);
  }
  EXPECT_THROW(usp_bound(0.0, 1.0, 1.0), Error);
  EXPECT_THROW(usp_bound(1.0, -1.0, 1.0), Error);
}

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eqfree/eqfree.hpp"

namespace testing_support {

using namespace eqfree;

inline DtSystem duffing() {
  VarSpace vs{{"x1", "x2"}, {"w"}, 1};
  const auto n = vs.names();
  CtSystem ct{vs, {parse("x2", n), parse("-8*x1 - 10*x1^3 - 4*x2 + w", n)}, {parse("x1", n)}};
  return rk4_discretize(ct, 0.01);
}

/// Reference RK4 step of the continuous Duffing vector field, written out directly.
inline Eigen::Vector2d duffing_rk4(const Eigen::Vector2d& x, double w, double h) {
  auto fc = [w](const Eigen::Vector2d& s) {
    return Eigen::Vector2d(s(1), -8 * s(0) - 10 * s(0) * s(0) * s(0) - 4 * s(1) + w);
  };
  Eigen::Vector2d k1 = fc(x), k2 = fc(x + h / 2 * k1), k3 = fc(x + h / 2 * k2), k4 = fc(x + h * k3);
  return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
}

inline Box duffing_region() { return Box::cube(3, -1.0, 1.0); }

/// Linear system x+ = A x + B w, z = C x + D w expressed in the DSL.
inline DtSystem lti(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C, const MatrixXd& D) {
  VarSpace vs;
  for (long i = 0; i < A.rows(); ++i) vs.states.push_back("x" + std::to_string(i + 1));
  for (long i = 0; i < B.cols(); ++i) vs.inputs.push_back("w" + std::to_string(i + 1));
  vs.n_z = static_cast<int>(C.rows());
  const auto names = vs.names();
  auto row = [&](const MatrixXd& L, const MatrixXd& R, long r) {
    std::ostringstream os;
    os << "0";
    for (long j = 0; j < L.cols(); ++j) os << " + (" << format_double(L(r, j)) << ")*" << names[static_cast<std::size_t>(j)];
    for (long j = 0; j < R.cols(); ++j)
      os << " + (" << format_double(R(r, j)) << ")*" << names[static_cast<std::size_t>(A.rows() + j)];
    return parse(os.str(), names);
  };
  std::vector<Expr> f, h;
  for (long r = 0; r < A.rows(); ++r) f.push_back(row(A, B, r));
  for (long r = 0; r < C.rows(); ++r) h.push_back(row(C, D, r));
  return DtSystem(vs, f, h);
}

/// H-infinity norm by a dense sweep of the largest singular value on the unit circle.
inline double hinf_sweep(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C, const MatrixXd& D, int samples = 10000) {
  using Cx = std::complex<double>;
  const long n = A.rows();
  double best = 0.0;
  for (int k = 0; k <= samples; ++k) {
    const double om = std::numbers::pi * k / samples;
    Eigen::MatrixXcd zI = Eigen::MatrixXcd::Identity(n, n) * std::exp(Cx(0.0, om));
    Eigen::MatrixXcd G = C.cast<Cx>() * (zI - A.cast<Cx>()).partialPivLu().solve(B.cast<Cx>()) + D.cast<Cx>();
    best = std::max(best, Eigen::JacobiSVD<Eigen::MatrixXcd>(G).singularValues()(0));
  }
  return best;
}

struct LtiSample {
  MatrixXd A, B, C, D;
};

/// Random stable system with spectral radius at most `rho`.
inline LtiSample random_stable_lti(std::mt19937& rng, int nx, int nw, int nz, double rho = 0.8) {
  std::normal_distribution<double> g;
  auto rnd = [&](int r, int c) {
    MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = g(rng);
    return m;
  };
  LtiSample s;
  s.A = rnd(nx, nx);
  const double sr = Eigen::EigenSolver<MatrixXd>(s.A).eigenvalues().cwiseAbs().maxCoeff();
  s.A *= rho / sr;
  s.B = rnd(nx, nw);
  s.C = rnd(nz, nx);
  s.D = 0.3 * rnd(nz, nw);
  return s;
}

/// Embedding of a linear system on a small box (the Jacobians are constant).
inline GridEmbedding lti_embedding(const DtSystem& sys, int grid = 2) {
  EmbeddingOptions eo;
  eo.grid_points = grid;
  eo.dset_grid_points = 3;
  return build_embedding(sys, Box::cube(sys.n_x() + sys.n_w(), -1.0, 1.0), make_scheduling_map(sys.vars()), eo);
}

/// Random smooth expression over `nvars` variables, built without simplification
/// and free of domain errors on all of R^n.
inline Expr random_expr(std::mt19937& rng, int nvars, int depth) {
  std::uniform_int_distribution<int> pick(0, 9);
  std::uniform_real_distribution<double> val(-3.0, 3.0);
  std::uniform_int_distribution<int> var(0, nvars - 1);
  if (depth == 0) {
    if (pick(rng) < 4) return node::constant(std::round(val(rng) * 100) / 100);
    return node::variable(var(rng));
  }
  auto sub = [&] { return random_expr(rng, nvars, depth - 1); };
  switch (pick(rng)) {
    case 0: return node::binary(Op::Add, sub(), sub());
    case 1: return node::binary(Op::Sub, sub(), sub());
    case 2: return node::binary(Op::Mul, sub(), sub());
    case 3:  // denominator bounded away from zero
      return node::binary(Op::Div, sub(), node::binary(Op::Add, node::constant(2.0), node::unary(Op::Sin, sub())));
    case 4: return node::unary(Op::Sin, sub());
    case 5: return node::unary(Op::Cos, sub());
    case 6: return node::unary(Op::Exp, node::unary(Op::Tanh, sub()));
    case 7: return node::unary(Op::Tanh, sub());
    case 8:
      return node::unary(Op::Sqrt, node::binary(Op::Add, node::constant(1.0), node::power(sub(), 2)));
    default: return node::power(sub(), 1 + static_cast<int>(rng() % 3));
  }
}

inline VarList var_names(int n) {
  VarList v;
  for (int i = 0; i < n; ++i) v.push_back("v" + std::to_string(i));
  return v;
}

}  // namespace testing_support

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "eqfree/system.hpp"

namespace eqfree {

/// Jacobians of (f, h) at one point: A = df/dx, B = df/dw, C = dh/dx, D = dh/dw.
struct FormMatrices {
  MatrixXd A, B, C, D;
};

/// Segment-averaged Jacobians over (x, w) -> (x+, w+).
struct IntegralFormMatrices {
  MatrixXd A, B, C, D;
  int nodes = 0;
};

inline FormMatrices eval_forms(const DtSystem& sys, const VectorXd& x, const VectorXd& w) {
  const int nx = sys.n_x(), nw = sys.n_w(), nz = sys.n_z();
  auto v = sys.eval_all(x, w);
  for (double d : v)
    if (!std::isfinite(d)) throw DomainError("non-finite Jacobian entry");
  const double* p = v.data() + nx + nz;
  auto take = [&](int r, int c) {
    MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = *p++;
    return m;
  };
  FormMatrices fm;
  fm.A = take(nx, nx);
  fm.B = take(nx, nw);
  fm.C = take(nz, nx);
  fm.D = take(nz, nw);
  return fm;
}

/// Gauss-Legendre nodes and weights mapped to [0, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  if (n < 1) throw Error("gauss_legendre: need at least one node");
  std::vector<double> x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    // Chebyshev initial guess, then Newton on P_n.
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        double pk = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    auto idx = static_cast<std::size_t>(i);
    x[idx] = 0.5 * (1.0 - z);
    w[idx] = 1.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

inline IntegralFormMatrices eval_integral_forms(const DtSystem& sys, const VectorXd& x_next, const VectorXd& w_next,
                                                const VectorXd& x, const VectorXd& w, int nodes = 8) {
  if (nodes < 2) throw Error("eval_integral_forms: need at least 2 quadrature nodes");
  auto [lam, wt] = gauss_legendre(nodes);
  IntegralFormMatrices out;
  out.nodes = nodes;
  out.A = MatrixXd::Zero(sys.n_x(), sys.n_x());
  out.B = MatrixXd::Zero(sys.n_x(), sys.n_w());
  out.C = MatrixXd::Zero(sys.n_z(), sys.n_x());
  out.D = MatrixXd::Zero(sys.n_z(), sys.n_w());
  for (std::size_t k = 0; k < lam.size(); ++k) {
    FormMatrices fm = eval_forms(sys, x + lam[k] * (x_next - x), w + lam[k] * (w_next - w));
    out.A += wt[k] * fm.A;
    out.B += wt[k] * fm.B;
    out.C += wt[k] * fm.C;
    out.D += wt[k] * fm.D;
  }
  return out;
}

/// Mismatch between the exact one-step differences of (f, h) and the
/// velocity-form prediction from the segment-averaged Jacobians.
inline double velocity_residual(const DtSystem& sys, const VectorXd& x_next, const VectorXd& w_next,
                                const VectorXd& x, const VectorXd& w, int nodes = 8) {
  auto ifm = eval_integral_forms(sys, x_next, w_next, x, w, nodes);
  VectorXd f1, z1, f0, z0;
  sys.step(x_next, w_next, f1, z1);
  sys.step(x, w, f0, z0);
  const VectorXd dx = x_next - x, dw = w_next - w;
  return ((f1 - f0) - (ifm.A * dx + ifm.B * dw)).norm() + ((z1 - z0) - (ifm.C * dx + ifm.D * dw)).norm();
}

}  // namespace eqfree

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "eqfree/forms.hpp"
#include "eqfree/lmi.hpp"
#include "eqfree/sets.hpp"

namespace eqfree {

/// V_s(x) = (f(x, w*) - x)' M0 (f(x, w*) - x) for a constant velocity storage M0.
struct ShiftedLyapunov {
  DtSystem sys;
  MatrixXd M0;
  VectorXd w_star;

  double operator()(const VectorXd& x) const {
    VectorXd d = sys.next_state(x, w_star) - x;
    return d.dot(M0 * d);
  }
};

inline ShiftedLyapunov shifted_lyapunov(const DtSystem& sys, const MatrixXd& M0, const VectorXd& w_star) {
  if (M0.rows() != sys.n_x() || M0.cols() != sys.n_x()) throw Error("shifted_lyapunov: M0 must be n_x x n_x");
  if (w_star.size() != sys.n_w()) throw Error("shifted_lyapunov: w* has wrong dimension");
  if (!(min_eig(M0) > 0.0)) throw Error("shifted_lyapunov: M0 must be positive definite");
  return ShiftedLyapunov{sys, sym(M0), w_star};
}

/// s(0, z) = z'Rz <= 0 for all z, i.e. R <= 0 (R < 0 when strict).
inline bool check_supply_stability(const QSRSupply& supply, bool strict = false) {
  const double e = max_eig(supply.R);
  return strict ? e < 0.0 : e <= 1e-12;
}

class DegenerateLevelSet : public Error {
 public:
  DegenerateLevelSet() : Error("level set degenerate: V_s vanishes on the region boundary") {}
};

/// Sublevel set {x : V_s(x) <= level}.
struct InvariantSet {
  ShiftedLyapunov lyap;
  double level = 0.0;
  Box region;
  int samples_per_face = 0;

  bool contains(const VectorXd& x) const { return lyap(x) <= level; }
};

/// Evenly sampled points on every face of a box, roughly `per_face` points each.
inline std::vector<VectorXd> boundary_samples(const Box& box, int per_face) {
  const int n = box.dims();
  std::vector<VectorXd> out;
  if (n == 1) {
    out.push_back(box.lo);
    out.push_back(box.hi);
    return out;
  }
  const int per_dim = std::max(2, static_cast<int>(std::ceil(std::pow(per_face, 1.0 / (n - 1)))));
  for (int d = 0; d < n; ++d) {
    for (double side : {box.lo(d), box.hi(d)}) {
      VectorXd lo(n - 1), hi(n - 1);
      for (int k = 0, j = 0; k < n; ++k)
        if (k != d) {
          lo(j) = box.lo(k);
          hi(j) = box.hi(k);
          ++j;
        }
      Grid face(Box(lo, hi), per_dim);
      for (std::size_t i = 0; i < face.size(); ++i) {
        VectorXd f = face.point(i), x(n);
        for (int k = 0, j = 0; k < n; ++k) x(k) = k == d ? side : f(j++);
        out.push_back(x);
      }
    }
  }
  return out;
}

/// Largest level whose sublevel set stays inside `region`: the minimum of V_s
/// over sampled boundary faces.
inline InvariantSet level_set_fit(const ShiftedLyapunov& lyap, const Box& region, int samples_per_face = 200) {
  if (region.dims() != lyap.sys.n_x()) throw Error("level_set_fit: region must be a state box");
  double level = std::numeric_limits<double>::infinity();
  for (const auto& x : boundary_samples(region, samples_per_face)) level = std::min(level, lyap(x));
  if (!(level > 0.0)) throw DegenerateLevelSet();
  return InvariantSet{lyap, level, region, samples_per_face};
}

/// Time-varying sublevel set {x : V_i(x, x_ref(t)) <= level}.
struct InvariantTube {
  std::vector<VectorXd> reference;
  std::function<double(const VectorXd&, const VectorXd&)> storage;
  double level = 0.0;
};

inline bool tube_membership(const InvariantTube& tube, const VectorXd& x, int t) {
  if (t < 0 || t >= static_cast<int>(tube.reference.size())) throw Error("tube_membership: time outside reference horizon");
  const VectorXd& ref = tube.reference[static_cast<std::size_t>(t)];
  if (x == ref) return tube.level >= 0.0;
  return tube.storage(x, ref) <= tube.level;
}

struct AlphaEstimate {
  double alpha = 1.0;
  bool sampled = true;
  std::size_t pairs = 0;
};

/// Sampled constant for x+ = f(x) + B w, z = C x: the smallest alpha with
///   q'Rq <= (Cd)'R(Cd) / alpha,   d = x - x*,  q = C (Abar(x, x*) - I) d,
/// over all pairs of a state grid and an equilibrium grid.
inline AlphaEstimate estimate_alpha(const DtSystem& sys, const MatrixXd& B, const MatrixXd& C, const MatrixXd& R,
                                    const Box& x_region, const Box& xstar_region, int points_per_dim = 21,
                                    int quad_nodes = 8) {
  const int nx = sys.n_x(), nw = sys.n_w(), nz = sys.n_z();
  if (B.rows() != nx || B.cols() != nw || C.rows() != nz || C.cols() != nx || R.rows() != nz || R.cols() != nz)
    throw Error("estimate_alpha: B, C, R dimensions do not match the system");
  if (x_region.dims() != nx || xstar_region.dims() != nx) throw Error("estimate_alpha: regions must be state boxes");
  if ((C * B).cwiseAbs().maxCoeff() > 1e-10) throw Error("estimate_alpha: CB must vanish");
  if (max_eig(R) > 1e-12) throw Error("estimate_alpha: R must be negative semidefinite");
  AlphaEstimate est;
  if (R.cwiseAbs().maxCoeff() == 0.0) return est;

  Grid gx(x_region, points_per_dim), gs(xstar_region, points_per_dim);
  const VectorXd w0 = VectorXd::Zero(nw);
  // Declared structure: f(x, w) = f(x, 0) + B w and h(x, w) = C x.
  for (std::size_t i = 0; i < gx.size(); ++i) {
    VectorXd x = gx.point(i);
    for (int j = 0; j < nw; ++j) {
      VectorXd w = VectorXd::Unit(nw, j);
      const double scale = 1.0 + sys.next_state(x, w0).norm();
      if ((sys.next_state(x, w) - sys.next_state(x, w0) - B * w).norm() > 1e-8 * scale ||
          (sys.output(x, w) - C * x).norm() > 1e-8 * (1.0 + (C * x).norm()))
        throw Error("estimate_alpha: system is not of the declared form x+ = f(x) + B w, z = C x");
    }
  }

  const MatrixXd Rn = -R;
  double alpha = 0.0;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const VectorXd x = gx.point(i);
    for (std::size_t k = 0; k < gs.size(); ++k) {
      const VectorXd xs = gs.point(k);
      const VectorXd d = x - xs;
      if (d.norm() == 0.0) continue;
      const MatrixXd Abar = eval_integral_forms(sys, x, w0, xs, w0, quad_nodes).A;
      const VectorXd q = C * (Abar - MatrixXd::Identity(nx, nx)) * d, cd = C * d;
      const double a = q.dot(Rn * q), b = cd.dot(Rn * cd);
      ++est.pairs;
      if (b <= 1e-14 * (1.0 + d.squaredNorm())) continue;
      if (a <= 1e-12 * b) throw Error("estimate_alpha: no finite alpha (C(Abar - I)d vanishes where Cd does not)");
      alpha = std::max(alpha, b / a);
    }
  }
  est.alpha = alpha > 0.0 ? alpha : 1.0;
  return est;
}

struct UspBound {
  double alpha = 1.0, beta = 0.0, gamma = 0.0, gamma_tilde = 0.0;
};

inline UspBound usp_bound(double alpha, double beta, double gamma) {
  if (!(alpha > 0.0)) throw Error("usp_bound: alpha must be positive");
  if (beta < 0.0 || gamma < 0.0) throw Error("usp_bound: beta and gamma must be nonnegative");
  return UspBound{alpha, beta, gamma, std::sqrt(alpha * beta * beta * gamma * gamma)};
}

}  // namespace eqfree

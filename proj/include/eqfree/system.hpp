#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "eqfree/expr.hpp"

namespace eqfree {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Discrete-time system x(t+1) = f(x, w), z = h(x, w). Expressions are over
/// VarSpace::names() (states first, then inputs).
class DtSystem {
 public:
  DtSystem() = default;

  DtSystem(VarSpace vars, std::vector<Expr> f, std::vector<Expr> h)
      : vars_(std::move(vars)), f_(std::move(f)), h_(std::move(h)) {
    vars_.validate();
    if (static_cast<int>(f_.size()) != vars_.n_x())
      throw Error("DtSystem: f has " + std::to_string(f_.size()) + " entries, expected " +
                  std::to_string(vars_.n_x()));
    if (static_cast<int>(h_.size()) != vars_.n_z)
      throw Error("DtSystem: h has " + std::to_string(h_.size()) + " entries, expected " +
                  std::to_string(vars_.n_z));
    const int nv = vars_.n_x() + vars_.n_w();
    for (const auto* list : {&f_, &h_})
      for (const auto& e : *list)
        if (max_variable(e) >= nv) throw Error("DtSystem: expression references an undeclared variable");

    std::vector<int> xs(static_cast<std::size_t>(vars_.n_x())), ws(static_cast<std::size_t>(vars_.n_w()));
    for (int i = 0; i < vars_.n_x(); ++i) xs[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < vars_.n_w(); ++i) ws[static_cast<std::size_t>(i)] = vars_.n_x() + i;

    std::vector<Expr> all = f_;
    all.insert(all.end(), h_.begin(), h_.end());
    for (const auto& block : {jacobian(f_, xs), jacobian(f_, ws), jacobian(h_, xs), jacobian(h_, ws)})
      all.insert(all.end(), block.begin(), block.end());
    maps_ = std::make_shared<const Tape>(std::vector<Expr>(all.begin(), all.begin() + static_cast<long>(f_.size() + h_.size())));
    full_ = std::make_shared<const Tape>(all);
  }

  const VarSpace& vars() const { return vars_; }
  const std::vector<Expr>& f() const { return f_; }
  const std::vector<Expr>& h() const { return h_; }
  int n_x() const { return vars_.n_x(); }
  int n_w() const { return vars_.n_w(); }
  int n_z() const { return vars_.n_z; }

  /// Evaluates (f(x,w), h(x,w)).
  void step(const VectorXd& x, const VectorXd& w, VectorXd& x_next, VectorXd& z) const {
    check_dims(x, w);
    VectorXd point(n_x() + n_w());
    point << x, w;
    VectorXd out(n_x() + n_z());
    maps_->eval(std::span<const double>(point.data(), static_cast<std::size_t>(point.size())),
                std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
    x_next = out.head(n_x());
    z = out.tail(n_z());
  }

  VectorXd next_state(const VectorXd& x, const VectorXd& w) const {
    VectorXd xn, z;
    step(x, w, xn, z);
    return xn;
  }

  VectorXd output(const VectorXd& x, const VectorXd& w) const {
    VectorXd xn, z;
    step(x, w, xn, z);
    return z;
  }

  /// Values and Jacobians in one pass: [f, h, df/dx, df/dw, dh/dx, dh/dw] (row-major blocks).
  std::vector<double> eval_all(const VectorXd& x, const VectorXd& w) const {
    check_dims(x, w);
    VectorXd point(n_x() + n_w());
    point << x, w;
    return full_->eval(std::span<const double>(point.data(), static_cast<std::size_t>(point.size())));
  }

 private:
  VarSpace vars_;
  std::vector<Expr> f_, h_;
  std::shared_ptr<const Tape> maps_, full_;

  void check_dims(const VectorXd& x, const VectorXd& w) const {
    if (x.size() != n_x() || w.size() != n_w())
      throw Error("dimension mismatch: got state " + std::to_string(x.size()) + ", input " +
                  std::to_string(w.size()));
  }
};

/// Continuous-time model dx/dt = fc(x, w), z = h(x, w).
struct CtSystem {
  VarSpace vars;
  std::vector<Expr> fc;
  std::vector<Expr> h;
};

/// Classical RK4 step with the input held constant over the sample, composed
/// at the expression level so Jacobians of the sampled map are exact.
inline DtSystem rk4_discretize(const CtSystem& sys, double ts) {
  if (!(ts > 0.0)) throw Error("rk4_discretize: sampling time must be positive");
  const auto nx = static_cast<std::size_t>(sys.vars.n_x());
  if (sys.fc.size() != nx) throw Error("rk4_discretize: fc dimension mismatch");

  auto stage = [&](const std::vector<Expr>& k, double c) {
    std::vector<Expr> repl(nx);
    for (std::size_t i = 0; i < nx; ++i) repl[i] = variable(static_cast<int>(i)) + c * k[i];
    std::unordered_map<const Node*, Expr> memo;
    std::vector<Expr> out;
    for (const auto& e : sys.fc) out.push_back(substitute(e, repl, &memo));
    return out;
  };
  const std::vector<Expr>& k1 = sys.fc;
  auto k2 = stage(k1, ts / 2);
  auto k3 = stage(k2, ts / 2);
  auto k4 = stage(k3, ts);
  std::vector<Expr> f;
  for (std::size_t i = 0; i < nx; ++i) {
    Expr incr = k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i];
    f.push_back(variable(static_cast<int>(i)) + (ts / 6.0) * incr);
  }
  return DtSystem(sys.vars, std::move(f), sys.h);
}

// ---------------------------------------------------------------------------

struct Trajectory {
  std::vector<VectorXd> x;  // T+1 samples
  std::vector<VectorXd> w;  // T samples
  std::vector<VectorXd> z;  // T samples

  int horizon() const { return static_cast<int>(w.size()); }
};

class SimulationDiverged : public Error {
 public:
  explicit SimulationDiverged(int t)
      : Error("simulation diverged at t = " + std::to_string(t)), time_(t) {}
  int time_index() const { return time_; }

 private:
  int time_;
};

inline constexpr double kDivergenceBound = 1e12;

/// Iterates the recursion for T steps under the input sequence `w` (length >= T).
inline Trajectory simulate(const DtSystem& sys, const VectorXd& x0, const std::vector<VectorXd>& w, int T) {
  if (T < 0) throw Error("simulate: negative horizon");
  if (static_cast<int>(w.size()) < T) throw Error("simulate: input sequence shorter than horizon");
  if (x0.size() != sys.n_x()) throw Error("simulate: initial state dimension mismatch");
  Trajectory tr;
  tr.x.reserve(static_cast<std::size_t>(T) + 1);
  tr.x.push_back(x0);
  for (int t = 0; t < T; ++t) {
    VectorXd xn, z;
    sys.step(tr.x.back(), w[static_cast<std::size_t>(t)], xn, z);
    if (!xn.allFinite() || xn.cwiseAbs().maxCoeff() > kDivergenceBound || !z.allFinite())
      throw SimulationDiverged(t + 1);
    tr.w.push_back(w[static_cast<std::size_t>(t)]);
    tr.z.push_back(std::move(z));
    tr.x.push_back(std::move(xn));
  }
  return tr;
}

/// Constant input sequence of length T.
inline std::vector<VectorXd> constant_input(const VectorXd& w, int T) {
  return std::vector<VectorXd>(static_cast<std::size_t>(T), w);
}

// ---------------------------------------------------------------------------

struct Equilibrium {
  VectorXd x, w, z;
  double residual = 0.0;
  bool jacobian_nonsingular = false;  // local uniqueness indicator
};

class EquilibriumNotFound : public Error {
 public:
  EquilibriumNotFound(double best_residual, VectorXd best_x)
      : Error("equilibrium search did not converge (best residual " + format_double(best_residual) + ")"),
        residual_(best_residual), x_(std::move(best_x)) {}
  double best_residual() const { return residual_; }
  const VectorXd& best_x() const { return x_; }

 private:
  double residual_;
  VectorXd x_;
};

struct NewtonOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;
};

/// Damped Newton on f(x, w*) - x = 0 with a halving line search.
inline Equilibrium find_equilibrium(const DtSystem& sys, const VectorXd& w_star, const VectorXd& x_guess,
                                    NewtonOptions opt = {}) {
  const int nx = sys.n_x(), nw = sys.n_w(), nz = sys.n_z();
  auto residual_of = [&](const VectorXd& x) { return VectorXd(sys.next_state(x, w_star) - x); };
  VectorXd x = x_guess;
  VectorXd g = residual_of(x);
  double r = g.norm();
  MatrixXd J(nx, nx);
  for (int it = 0; it < opt.max_iterations && r >= opt.tolerance; ++it) {
    auto all = sys.eval_all(x, w_star);
    const double* a = all.data() + nx + nz;
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < nx; ++j) J(i, j) = a[i * nx + j] - (i == j ? 1.0 : 0.0);
    VectorXd dx = J.completeOrthogonalDecomposition().solve(-g);
    double step = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls, step *= 0.5) {
      VectorXd xt = x + step * dx;
      VectorXd gt = residual_of(xt);
      if (gt.allFinite() && gt.norm() < r) {
        x = xt;
        g = gt;
        r = gt.norm();
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (!(r < opt.tolerance)) throw EquilibriumNotFound(r, x);

  Equilibrium eq;
  eq.x = x;
  eq.w = w_star;
  eq.z = sys.output(x, w_star);
  eq.residual = r;
  auto all = sys.eval_all(x, w_star);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < nx; ++j) J(i, j) = all[static_cast<std::size_t>(nx + nz + i * nx + j)] - (i == j ? 1.0 : 0.0);
  eq.jacobian_nonsingular = J.fullPivLu().isInvertible();
  (void)nw;
  return eq;
}

// ---------------------------------------------------------------------------

struct Increments {
  std::vector<VectorXd> dx;  // length T
  std::vector<VectorXd> dw;  // length T-1
  std::vector<VectorXd> dz;  // length T-1
};

/// Forward increments x(t+1)-x(t), w(t+1)-w(t), z(t+1)-z(t).
inline Increments forward_difference(const Trajectory& tr) {
  const int T = tr.horizon();
  if (T < 1) throw Error("forward_difference: horizon too short");
  Increments inc;
  for (int t = 0; t < T; ++t) inc.dx.push_back(tr.x[static_cast<std::size_t>(t) + 1] - tr.x[static_cast<std::size_t>(t)]);
  for (int t = 0; t + 1 < T; ++t) {
    inc.dw.push_back(tr.w[static_cast<std::size_t>(t) + 1] - tr.w[static_cast<std::size_t>(t)]);
    inc.dz.push_back(tr.z[static_cast<std::size_t>(t) + 1] - tr.z[static_cast<std::size_t>(t)]);
  }
  return inc;
}

/// CSV with header `t,x1..xn,w1..wm,z1..zk`; the final row carries x(T) only.
inline void write_csv(std::ostream& os, const Trajectory& tr) {
  const auto nx = tr.x.empty() ? 0 : tr.x.front().size();
  const auto nw = tr.w.empty() ? 0 : tr.w.front().size();
  const auto nz = tr.z.empty() ? 0 : tr.z.front().size();
  os << "t";
  for (long i = 1; i <= nx; ++i) os << ",x" << i;
  for (long i = 1; i <= nw; ++i) os << ",w" << i;
  for (long i = 1; i <= nz; ++i) os << ",z" << i;
  os << '\n';
  for (std::size_t t = 0; t < tr.x.size(); ++t) {
    os << t;
    for (long i = 0; i < nx; ++i) os << ',' << format_double(tr.x[t](i));
    for (long i = 0; i < nw; ++i) os << ',' << (t < tr.w.size() ? format_double(tr.w[t](i)) : "");
    for (long i = 0; i < nz; ++i) os << ',' << (t < tr.z.size() ? format_double(tr.z[t](i)) : "");
    os << '\n';
  }
}

}  // namespace eqfree

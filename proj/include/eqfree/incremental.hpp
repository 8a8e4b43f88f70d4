#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

#include "eqfree/lmi.hpp"
#include "eqfree/parallel.hpp"
#include "eqfree/sets.hpp"
#include "eqfree/system.hpp"

namespace eqfree {

class MetricNotPositive : public Error {
 public:
  MetricNotPositive() : Error("storage metric is not positive definite along the path (outside the certified region?)") {}
};

/// Riemannian metric G(x) on the state space with its partial derivatives.
class StateMetric {
 public:
  virtual ~StateMetric() = default;
  virtual int dims() const = 0;
  virtual MatrixXd value(const VectorXd& x) const = 0;
  /// dG/dx_l for every state coordinate l.
  virtual std::vector<MatrixXd> derivatives(const VectorXd& x) const = 0;
};

class ConstantMetric : public StateMetric {
 public:
  explicit ConstantMetric(MatrixXd G) : G_(sym(G)) {}
  int dims() const override { return static_cast<int>(G_.rows()); }
  MatrixXd value(const VectorXd&) const override { return G_; }
  std::vector<MatrixXd> derivatives(const VectorXd&) const override {
    return std::vector<MatrixXd>(static_cast<std::size_t>(dims()), MatrixXd::Zero(dims(), dims()));
  }

 private:
  MatrixXd G_;
};

/// Storage metric X(eta(x, 0)) of a solved certificate. The basis reads only
/// state-mapped scheduling coordinates, so the input value is immaterial.
class CertificateMetric : public StateMetric {
 public:
  CertificateMetric(Certificate cert, const SchedulingMap& map, int n_x, int n_w)
      : cert_(std::move(cert)), nx_(n_x), nw_(n_w) {
    if (cert_.M.empty()) throw Error("CertificateMetric: certificate has no storage");
    for (int k : cert_.basis.reads())
      if (!map.state_mapped[static_cast<std::size_t>(k)]) throw Error("CertificateMetric: basis reads an input-mapped coordinate");
    eta_ = std::make_shared<const Tape>(map.eta);
    std::vector<int> states(static_cast<std::size_t>(n_x));
    for (int i = 0; i < n_x; ++i) states[static_cast<std::size_t>(i)] = i;
    deta_ = std::make_shared<const Tape>(jacobian(map.eta, states));
    np_ = map.dims();
  }

  int dims() const override { return nx_; }
  const Certificate& certificate() const { return cert_; }

  VectorXd schedule(const VectorXd& x) const {
    std::vector<double> in(static_cast<std::size_t>(nx_ + nw_), 0.0);
    for (int i = 0; i < nx_; ++i) in[static_cast<std::size_t>(i)] = x(i);
    VectorXd p(np_);
    eta_->eval(in, std::span<double>(p.data(), static_cast<std::size_t>(np_)));
    return p;
  }

  MatrixXd value(const VectorXd& x) const override {
    MatrixXd M = cert_.decision(schedule(x));
    if (!(min_eig(M) > 0.0)) throw MetricNotPositive();
    return cert_.form == StorageForm::Direct ? M : MatrixXd(sym(cert_.storage_scale * M.inverse()));
  }

  std::vector<MatrixXd> derivatives(const VectorXd& x) const override {
    std::vector<double> in(static_cast<std::size_t>(nx_ + nw_), 0.0);
    for (int i = 0; i < nx_; ++i) in[static_cast<std::size_t>(i)] = x(i);
    const VectorXd p = schedule(x);
    std::vector<double> J(static_cast<std::size_t>(np_ * nx_));
    deta_->eval(in, J);
    const MatrixXd g = cert_.basis.gradients(p);  // terms x sched
    const MatrixXd M = cert_.decision(p);
    MatrixXd Minv;
    if (cert_.form != StorageForm::Direct) Minv = M.inverse();
    std::vector<MatrixXd> out;
    for (int l = 0; l < nx_; ++l) {
      MatrixXd dM = MatrixXd::Zero(nx_, nx_);
      for (std::size_t i = 0; i < cert_.M.size(); ++i) {
        double c = 0.0;
        for (int k = 0; k < np_; ++k) c += g(static_cast<long>(i), k) * J[static_cast<std::size_t>(k * nx_ + l)];
        if (c != 0.0) dM += c * cert_.M[i];
      }
      out.push_back(cert_.form == StorageForm::Direct ? dM : MatrixXd(-cert_.storage_scale * Minv * dM * Minv));
    }
    return out;
  }

 private:
  Certificate cert_;
  int nx_, nw_, np_ = 0;
  std::shared_ptr<const Tape> eta_, deta_;
};

/// N+1 waypoints from x_ref (index 0) to x (index N).
struct PiecewisePath {
  std::vector<VectorXd> waypoints;
  int segments() const { return static_cast<int>(waypoints.size()) - 1; }
};

/// Midpoint-rule energy N * sum_k d_k' G(mid_k) d_k.
inline double path_energy(const StateMetric& G, const PiecewisePath& path) {
  const int N = path.segments();
  double e = 0.0;
  for (int k = 0; k < N; ++k) {
    const VectorXd& a = path.waypoints[static_cast<std::size_t>(k)];
    const VectorXd& b = path.waypoints[static_cast<std::size_t>(k) + 1];
    const VectorXd d = b - a;
    e += d.dot(G.value(0.5 * (a + b)) * d);
  }
  return N * e;
}

inline PiecewisePath straight_path(const VectorXd& from, const VectorXd& to, int N) {
  if (N < 1) throw Error("path needs at least one segment");
  PiecewisePath p;
  for (int k = 0; k <= N; ++k) p.waypoints.push_back(k == N ? to : VectorXd(from + (to - from) * (static_cast<double>(k) / N)));
  return p;
}

struct GeodesicOptions {
  int segments = 16;
  double gradient_tolerance = 1e-8;
  int max_iterations = 500;
};

struct GeodesicResult {
  PiecewisePath path;
  double energy = 0.0;
  double straight_energy = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
};

namespace detail {

inline double energy_and_gradient(const StateMetric& G, const PiecewisePath& path, VectorXd* grad) {
  const int N = path.segments(), n = G.dims();
  double e = 0.0;
  if (grad) grad->setZero((N - 1) * n);
  for (int k = 0; k < N; ++k) {
    const VectorXd& a = path.waypoints[static_cast<std::size_t>(k)];
    const VectorXd& b = path.waypoints[static_cast<std::size_t>(k) + 1];
    const VectorXd d = b - a, mid = 0.5 * (a + b);
    const MatrixXd Gm = G.value(mid);
    e += d.dot(Gm * d);
    if (!grad) continue;
    VectorXd common(n);
    const auto dG = G.derivatives(mid);
    for (int l = 0; l < n; ++l) common(l) = 0.5 * d.dot(dG[static_cast<std::size_t>(l)] * d);
    const VectorXd Gd = 2.0 * Gm * d;
    // Waypoint k (start of segment) and k+1 (end); only interior ones are free.
    if (k >= 1) grad->segment((k - 1) * n, n) += N * (common - Gd);
    if (k + 1 <= N - 1) grad->segment(k * n, n) += N * (common + Gd);
  }
  return N * e;
}

}  // namespace detail

/// Locally minimal discretized path energy between x_ref and x (BFGS on the
/// interior waypoints, straight-line start).
inline GeodesicResult geodesic(const StateMetric& G, const VectorXd& x, const VectorXd& x_ref, GeodesicOptions opt = {}) {
  const int n = G.dims(), N = opt.segments;
  if (x.size() != n || x_ref.size() != n) throw Error("geodesic: endpoint dimension mismatch");
  GeodesicResult res;
  res.path = straight_path(x_ref, x, N);
  VectorXd g;
  res.energy = res.straight_energy = detail::energy_and_gradient(G, res.path, N > 1 ? &g : nullptr);
  if (N == 1 || x == x_ref) return res;

  const int m = (N - 1) * n;
  auto unpack = [&](const VectorXd& z) {
    PiecewisePath p = res.path;
    for (int k = 1; k < N; ++k) p.waypoints[static_cast<std::size_t>(k)] = z.segment((k - 1) * n, n);
    return p;
  };
  VectorXd z(m);
  for (int k = 1; k < N; ++k) z.segment((k - 1) * n, n) = res.path.waypoints[static_cast<std::size_t>(k)];
  MatrixXd H = MatrixXd::Identity(m, m);  // inverse Hessian approximation
  // Scale the initial inverse Hessian to the straight-line curvature.
  {
    const double s = (x - x_ref).squaredNorm() / std::max(res.energy, 1e-300) / (2.0 * N);
    if (std::isfinite(s) && s > 0.0) H *= s;
  }
  double e = res.energy;
  int it = 0;
  for (; it < opt.max_iterations && g.norm() >= opt.gradient_tolerance; ++it) {
    VectorXd dir = -H * g;
    if (dir.dot(g) >= 0.0) {
      H = MatrixXd::Identity(m, m);
      dir = -g;
    }
    double step = 1.0, e_new = e;
    VectorXd z_new, g_new;
    bool ok = false;
    for (int ls = 0; ls < 50; ++ls, step *= 0.5) {
      z_new = z + step * dir;
      try {
        e_new = detail::energy_and_gradient(G, unpack(z_new), &g_new);
      } catch (const MetricNotPositive&) {
        continue;
      }
      if (std::isfinite(e_new) && e_new <= e + 1e-4 * step * g.dot(dir)) {
        ok = true;
        break;
      }
    }
    if (!ok) break;
    const VectorXd s = z_new - z, yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-300) {
      const double rho = 1.0 / sy;
      const MatrixXd I = MatrixXd::Identity(m, m);
      H = (I - rho * s * yv.transpose()) * H * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
    }
    z = z_new;
    g = g_new;
    e = e_new;
  }
  res.path = unpack(z);
  res.energy = e;
  res.iterations = it;
  res.gradient_norm = g.norm();
  return res;
}

/// V_i(x, x_ref): geodesic energy under the storage metric.
inline double incremental_storage(const StateMetric& G, const VectorXd& x, const VectorXd& x_ref,
                                  GeodesicOptions opt = {}) {
  if (x == x_ref) return 0.0;
  return geodesic(G, x, x_ref, opt).energy;
}

/// Per-sample record of the incremental dissipation inequality. Index t runs
/// over 0..T: Vi[t] = V_i(x(t), x_ref(t)), cumulative[t] = V_i(0) + sum of the
/// supply over tau < t, margin[t] = cumulative[t] - Vi[t].
struct IdReport {
  std::vector<double> Vi, cumulative, margin, dist;
  std::vector<int> region_violations;

  std::size_t size() const { return Vi.size(); }
  double min_margin() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : margin) m = std::min(m, v);
    return m;
  }
};

/// Euclidean distance between paired states at every sample.
inline std::vector<double> convergence_metric(const Trajectory& a, const Trajectory& b) {
  if (a.x.size() != b.x.size()) throw Error("convergence_metric: horizons differ");
  std::vector<double> d;
  d.reserve(a.x.size());
  for (std::size_t t = 0; t < a.x.size(); ++t) d.push_back((a.x[t] - b.x[t]).norm());
  return d;
}

inline IdReport verify_id(const StateMetric& G, const QSRSupply& supply, const Trajectory& a, const Trajectory& b,
                          const std::optional<Box>& region = std::nullopt, GeodesicOptions opt = {}) {
  if (a.horizon() != b.horizon() || a.x.size() != b.x.size()) throw Error("verify_id: trajectories must share the horizon");
  const std::size_t T = static_cast<std::size_t>(a.horizon());
  IdReport rep;
  rep.Vi.assign(T + 1, 0.0);
  rep.dist = convergence_metric(a, b);
  parallel_chunks(T + 1, 8, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t t = lo; t < hi; ++t) rep.Vi[t] = incremental_storage(G, a.x[t], b.x[t], opt);
  });
  rep.cumulative.resize(T + 1);
  rep.margin.resize(T + 1);
  double cum = rep.Vi[0];
  for (std::size_t t = 0; t <= T; ++t) {
    if (t > 0) cum += supply(a.w[t - 1] - b.w[t - 1], a.z[t - 1] - b.z[t - 1]);
    rep.cumulative[t] = cum;
    rep.margin[t] = cum - rep.Vi[t];
  }
  if (region) {
    const int nx = static_cast<int>(a.x[0].size());
    const Box xs = region->slice(0, nx);
    const Box ws = region->slice(nx, region->dims() - nx);
    for (std::size_t t = 0; t <= T; ++t) {
      bool in = xs.contains(a.x[t], 1e-12) && xs.contains(b.x[t], 1e-12);
      if (t < T) in = in && ws.contains(a.w[t], 1e-12) && ws.contains(b.w[t], 1e-12);
      if (!in) rep.region_violations.push_back(static_cast<int>(t));
    }
  }
  return rep;
}

inline void write_csv(std::ostream& os, const IdReport& r) {
  os << "t,Vi,cumulative_supply_plus_init,margin,dist\n";
  for (std::size_t t = 0; t < r.size(); ++t)
    os << t << ',' << format_double(r.Vi[t]) << ',' << format_double(r.cumulative[t]) << ','
       << format_double(r.margin[t]) << ',' << format_double(r.dist[t]) << '\n';
}

}  // namespace eqfree

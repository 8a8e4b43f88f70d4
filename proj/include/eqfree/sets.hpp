#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "eqfree/forms.hpp"
#include "eqfree/system.hpp"

namespace eqfree {

/// Axis-aligned box; lo <= hi in every coordinate.
struct Box {
  VectorXd lo, hi;

  Box() = default;
  Box(VectorXd l, VectorXd h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw Error("Box: bound dimensions differ");
    for (int i = 0; i < lo.size(); ++i)
      if (!(lo(i) <= hi(i))) throw Error("Box: lo > hi in dimension " + std::to_string(i));
  }

  static Box cube(int n, double lo, double hi) {
    return Box(VectorXd::Constant(n, lo), VectorXd::Constant(n, hi));
  }

  int dims() const { return static_cast<int>(lo.size()); }
  VectorXd center() const { return 0.5 * (lo + hi); }
  VectorXd width() const { return hi - lo; }

  bool contains(const VectorXd& x, double tol = 0.0) const {
    for (int i = 0; i < dims(); ++i)
      if (x(i) < lo(i) - tol || x(i) > hi(i) + tol) return false;
    return true;
  }

  /// Scales the box about its center.
  Box inflated(double factor) const {
    VectorXd c = center(), r = 0.5 * factor * width();
    return Box(c - r, c + r);
  }

  /// Cartesian product (this, other).
  Box times(const Box& other) const {
    VectorXd l(dims() + other.dims()), h(dims() + other.dims());
    l << lo, other.lo;
    h << hi, other.hi;
    return Box(l, h);
  }

  Box slice(int start, int n) const { return Box(lo.segment(start, n), hi.segment(start, n)); }
};

/// Equispaced Cartesian grid including the box corners.
class Grid {
 public:
  Grid() = default;
  Grid(Box box, std::vector<int> counts) : box_(std::move(box)), counts_(std::move(counts)) {
    if (static_cast<int>(counts_.size()) != box_.dims()) throw Error("Grid: count per dimension required");
    for (int i = 0; i < box_.dims(); ++i) {
      const int c = counts_[static_cast<std::size_t>(i)];
      const bool degenerate = box_.lo(i) == box_.hi(i);
      if (c < 1 || (c == 1 && !degenerate))
        throw Error("Grid: need >= 2 points in non-degenerate dimension " + std::to_string(i));
    }
  }
  Grid(Box box, int per_dim) : Grid(box, uniform_counts(box, per_dim)) {}

  const Box& box() const { return box_; }
  const std::vector<int>& counts() const { return counts_; }

  std::size_t size() const {
    std::size_t n = 1;
    for (int c : counts_) n *= static_cast<std::size_t>(c);
    return n;
  }

  double coordinate(int dim, int i) const {
    const int c = counts_[static_cast<std::size_t>(dim)];
    if (c == 1) return box_.lo(dim);
    if (i == c - 1) return box_.hi(dim);
    return box_.lo(dim) + (box_.hi(dim) - box_.lo(dim)) * i / (c - 1);
  }

  /// Lexicographic order, last dimension varying fastest.
  VectorXd point(std::size_t index) const {
    VectorXd p(box_.dims());
    for (int d = box_.dims() - 1; d >= 0; --d) {
      const auto c = static_cast<std::size_t>(counts_[static_cast<std::size_t>(d)]);
      p(d) = coordinate(d, static_cast<int>(index % c));
      index /= c;
    }
    return p;
  }

  std::vector<VectorXd> enumerate() const {
    std::vector<VectorXd> pts;
    pts.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) pts.push_back(point(i));
    return pts;
  }

 private:
  Box box_;
  std::vector<int> counts_;

  static std::vector<int> uniform_counts(const Box& b, int per_dim) {
    std::vector<int> c(static_cast<std::size_t>(b.dims()));
    for (int i = 0; i < b.dims(); ++i) c[static_cast<std::size_t>(i)] = b.lo(i) == b.hi(i) ? 1 : per_dim;
    return c;
  }
};

/// Bounding box of the one-step increments f(x,w) - x over a grid of the
/// (x, w) region, scaled about its center by `inflation`.
inline Box estimate_dset(const DtSystem& sys, const Box& region, const Grid& grid, double inflation = 1.05) {
  if (region.dims() != sys.n_x() + sys.n_w()) throw Error("estimate_dset: region must cover (x, w)");
  if (inflation < 1.0) throw Error("estimate_dset: inflation must be >= 1");
  const int nx = sys.n_x();
  VectorXd lo = VectorXd::Constant(nx, std::numeric_limits<double>::infinity());
  VectorXd hi = -lo;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    VectorXd p = grid.point(i);
    VectorXd d = sys.next_state(p.head(nx), p.tail(sys.n_w())) - p.head(nx);
    if (!d.allFinite()) throw DomainError("estimate_dset: non-finite f at grid point " + std::to_string(i));
    lo = lo.cwiseMin(d);
    hi = hi.cwiseMax(d);
  }
  return Box(lo, hi).inflated(inflation);
}

/// Scheduling map eta(x, w) -> p; each coordinate is an expression over the
/// system variables. Coordinates that do not read any input are state-mapped.
struct SchedulingMap {
  std::vector<Expr> eta;
  std::vector<std::string> names;  // p1..pn by default
  std::vector<bool> state_mapped;

  int dims() const { return static_cast<int>(eta.size()); }

  VectorXd operator()(const VectorXd& x, const VectorXd& w) const {
    VectorXd point(x.size() + w.size());
    point << x, w;
    VectorXd p(dims());
    Tape tape(eta);
    tape.eval(std::span<const double>(point.data(), static_cast<std::size_t>(point.size())),
              std::span<double>(p.data(), static_cast<std::size_t>(p.size())));
    return p;
  }
};

/// Identity selection p = col(x, w) when `spec` is empty, else the parsed expressions.
inline SchedulingMap make_scheduling_map(const VarSpace& vars, const std::vector<std::string>& spec = {}) {
  SchedulingMap m;
  const VarList names = vars.names();
  if (spec.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i) m.eta.push_back(variable(static_cast<int>(i)));
  } else {
    for (const auto& s : spec) m.eta.push_back(parse(s, names));
  }
  for (int k = 0; k < m.dims(); ++k) {
    m.names.push_back("p" + std::to_string(k + 1));
    bool reads_input = false;
    for (int j = 0; j < vars.n_w(); ++j) reads_input = reads_input || depends_on(m.eta[static_cast<std::size_t>(k)], vars.n_x() + j);
    m.state_mapped.push_back(!reads_input);
  }
  return m;
}

/// One grid sample of the embedding: region point, its scheduling value and
/// the Jacobians there (which equal the LPV matrices A(p)..D(p)).
struct EmbeddingPoint {
  VectorXd x, w, p;
  FormMatrices forms;
};

struct EmbeddingOptions {
  int grid_points = 9;        // per region dimension for the LMI grid
  int dset_grid_points = 41;  // per region dimension for rate estimation
  double inflation = 1.05;
  std::optional<Box> input_rate_bounds;  // overrides the default for input-mapped coordinates
};

struct GridEmbedding {
  DtSystem sys;
  Box region;  // over (x, w)
  SchedulingMap map;
  Box P;       // scheduling box
  Box Pi;      // rate box
  Box dset;    // state increment box
  Grid grid;   // LMI grid over the region
  std::vector<EmbeddingPoint> points;
};

/// Builds the grid-based DPV embedding: P is the image of the region, Pi
/// bounds p(t+1)-p(t) (state-mapped coordinates from sampled increments,
/// input-mapped ones from the width of their image unless overridden).
inline GridEmbedding build_embedding(const DtSystem& sys, const Box& region, SchedulingMap map,
                                     const EmbeddingOptions& opt = {}) {
  const int nx = sys.n_x(), nw = sys.n_w();
  if (region.dims() != nx + nw) throw Error("build_embedding: region must cover (x, w)");
  for (const auto& e : map.eta)
    if (max_variable(e) >= nx + nw) throw Error("build_embedding: scheduling map references unknown variables");
  const int np = map.dims();
  GridEmbedding emb{sys, region, map, {}, {}, {}, Grid(region, opt.grid_points), {}};

  Tape eta_tape(map.eta);
  auto eta_at = [&](const VectorXd& x, const VectorXd& w) {
    VectorXd pt(nx + nw);
    pt << x, w;
    VectorXd p(np);
    eta_tape.eval(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())),
                  std::span<double>(p.data(), static_cast<std::size_t>(np)));
    return p;
  };

  // Dense sweep for P, D and the rate box.
  Grid dense(region, opt.dset_grid_points);
  VectorXd plo = VectorXd::Constant(np, std::numeric_limits<double>::infinity()), phi = -plo;
  VectorXd vlo = plo, vhi = phi;
  VectorXd dlo = VectorXd::Constant(nx, std::numeric_limits<double>::infinity()), dhi = -dlo;
  auto absorb = [&](const VectorXd& pt) {
    VectorXd x = pt.head(nx), w = pt.tail(nw);
    VectorXd xn = sys.next_state(x, w);
    if (!xn.allFinite()) throw DomainError("build_embedding: non-finite f in region");
    VectorXd p = eta_at(x, w);
    plo = plo.cwiseMin(p);
    phi = phi.cwiseMax(p);
    VectorXd v = eta_at(xn, w) - p;
    vlo = vlo.cwiseMin(v);
    vhi = vhi.cwiseMax(v);
    dlo = dlo.cwiseMin(xn - x);
    dhi = dhi.cwiseMax(xn - x);
  };
  for (std::size_t i = 0; i < dense.size(); ++i) absorb(dense.point(i));
  emb.P = Box(plo, phi);
  emb.dset = Box(dlo, dhi).inflated(opt.inflation);

  Box rates = Box(vlo, vhi).inflated(opt.inflation);
  VectorXd rlo = rates.lo, rhi = rates.hi;
  for (int k = 0; k < np; ++k) {
    if (map.state_mapped[static_cast<std::size_t>(k)]) continue;
    if (opt.input_rate_bounds && opt.input_rate_bounds->dims() == np) {
      rlo(k) = opt.input_rate_bounds->lo(k);
      rhi(k) = opt.input_rate_bounds->hi(k);
    } else {
      const double width = phi(k) - plo(k);
      rlo(k) = -width;
      rhi(k) = width;
    }
  }
  emb.Pi = Box(rlo, rhi);

  emb.points.reserve(emb.grid.size());
  for (std::size_t i = 0; i < emb.grid.size(); ++i) {
    VectorXd pt = emb.grid.point(i);
    EmbeddingPoint ep;
    ep.x = pt.head(nx);
    ep.w = pt.tail(nw);
    ep.p = eta_at(ep.x, ep.w);
    ep.forms = eval_forms(sys, ep.x, ep.w);
    emb.points.push_back(std::move(ep));
  }
  return emb;
}

}  // namespace eqfree

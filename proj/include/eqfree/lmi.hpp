#pragma once

// Grid-based LMI conditions for differential (Q,S,R) dissipativity, incremental
// l2-gain and incremental passivity, and their solution as SDPs.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eqfree/sdp.hpp"
#include "eqfree/sets.hpp"

namespace eqfree {

inline MatrixXd sym(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

inline double min_eig(const MatrixXd& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(sym(m), Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

inline double max_eig(const MatrixXd& m) {
  if (m.size() == 0) return -std::numeric_limits<double>::infinity();
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(sym(m), Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

/// Quadratic supply s(w, z) = [w; z]' [Q S; S' R] [w; z].
struct QSRSupply {
  MatrixXd Q, S, R;

  QSRSupply() = default;
  QSRSupply(const MatrixXd& q, const MatrixXd& s, const MatrixXd& r) : Q(sym(q)), S(s), R(sym(r)) {
    if (Q.rows() != Q.cols() || R.rows() != R.cols()) throw Error("QSRSupply: Q and R must be square");
    if (S.rows() != Q.rows() || S.cols() != R.rows()) throw Error("QSRSupply: S must be n_w x n_z");
  }

  static QSRSupply l2_gain(double gamma, int nw, int nz) {
    return QSRSupply(gamma * gamma * MatrixXd::Identity(nw, nw), MatrixXd::Zero(nw, nz), -MatrixXd::Identity(nz, nz));
  }
  static QSRSupply passivity(int n) {
    return QSRSupply(MatrixXd::Zero(n, n), MatrixXd::Identity(n, n), MatrixXd::Zero(n, n));
  }

  int n_w() const { return static_cast<int>(Q.rows()); }
  int n_z() const { return static_cast<int>(R.rows()); }

  double operator()(const VectorXd& w, const VectorXd& z) const {
    return w.dot(Q * w) + 2.0 * w.dot(S * z) + z.dot(R * z);
  }
};

/// M(p) = sum_i phi_i(p) M_i. phi_0 == 1 is always the first term.
class StorageBasis {
 public:
  StorageBasis() : StorageBasis(std::vector<std::string>{}, VarList{}) {}

  StorageBasis(const std::vector<std::string>& terms, const VarList& sched_names) : sched_(sched_names) {
    texts_.push_back("1");
    phi_.push_back(constant(1.0));
    for (const auto& t : terms) {
      Expr e = parse(t, sched_);
      bool dup = false;
      for (const auto& f : phi_) dup = dup || structurally_equal(f, e);
      if (dup) continue;
      phi_.push_back(e);
      texts_.push_back(to_string(e, sched_));
    }
    build();
  }

  std::size_t size() const { return phi_.size(); }
  int sched_dims() const { return static_cast<int>(sched_.size()); }
  const std::vector<std::string>& terms() const { return texts_; }
  const std::vector<Expr>& functions() const { return phi_; }
  const VarList& sched_names() const { return sched_; }
  bool is_constant() const { return reads_.empty(); }

  /// Scheduling coordinates read by any basis function.
  const std::vector<int>& reads() const { return reads_; }

  VectorXd values(const VectorXd& p) const {
    check(p);
    VectorXd out(static_cast<long>(size()));
    tape_->eval(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())),
                std::span<double>(out.data(), size()));
    return out;
  }

  /// d phi_i / d p_k, row i.
  MatrixXd gradients(const VectorXd& p) const {
    check(p);
    MatrixXd g(static_cast<long>(size()), sched_dims());
    std::vector<double> buf(size() * static_cast<std::size_t>(sched_dims()));
    if (!buf.empty()) grad_->eval(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), buf);
    for (std::size_t i = 0; i < size(); ++i)
      for (int k = 0; k < sched_dims(); ++k) g(static_cast<long>(i), k) = buf[i * static_cast<std::size_t>(sched_dims()) + static_cast<std::size_t>(k)];
    return g;
  }

  MatrixXd evaluate(const std::vector<MatrixXd>& coeffs, const VectorXd& p) const {
    if (coeffs.size() != size()) throw Error("StorageBasis: coefficient count mismatch");
    VectorXd phi = values(p);
    MatrixXd m = MatrixXd::Zero(coeffs[0].rows(), coeffs[0].cols());
    for (std::size_t i = 0; i < size(); ++i) m += phi(static_cast<long>(i)) * coeffs[i];
    return m;
  }

 private:
  VarList sched_;
  std::vector<Expr> phi_;
  std::vector<std::string> texts_;
  std::vector<int> reads_;
  std::shared_ptr<const Tape> tape_, grad_;

  void check(const VectorXd& p) const {
    if (p.size() != sched_dims()) throw Error("StorageBasis: scheduling vector has wrong dimension");
  }

  void build() {
    reads_.clear();
    for (int k = 0; k < sched_dims(); ++k) {
      bool r = false;
      for (const auto& f : phi_) r = r || depends_on(f, k);
      if (r) reads_.push_back(k);
    }
    tape_ = std::make_shared<const Tape>(phi_);
    std::vector<Expr> d;
    for (const auto& f : phi_)
      for (int k = 0; k < sched_dims(); ++k) d.push_back(diff(f, k));
    grad_ = std::make_shared<const Tape>(d);
  }
};

/// How the certified storage matrix X(p) relates to the decision matrix M(p).
enum class StorageForm {
  Direct,        // X = M
  ScaledInverse  // X = scale * M^{-1}
};

struct LmiOptions {
  double alpha1 = 1e-6;
  int v_points = 3;  // per scheduling-rate coordinate read by the basis
};

/// Assembled problem with the bookkeeping needed to read back a certificate.
struct LmiProgram {
  std::string kind;
  SdpProblem sdp;
  StorageBasis basis;
  int n_x = 0;
  int gamma_var = -1;  // -1 when the problem is a pure feasibility test
  StorageForm form = StorageForm::Direct;
  std::vector<std::vector<int>> coeff_vars;  // per basis term, nx(nx+1)/2 variable ids (upper triangle)
  std::vector<VectorXd> p_points;            // distinct scheduling points of the grid
  std::vector<VectorXd> v_points;
  LmiOptions options;
  Box region;
  std::vector<int> grid_counts;
  std::size_t pairs = 0;

  MatrixXd coefficient(const VectorXd& y, std::size_t term) const {
    MatrixXd m(n_x, n_x);
    std::size_t k = 0;
    for (int i = 0; i < n_x; ++i)
      for (int j = i; j < n_x; ++j, ++k) m(i, j) = m(j, i) = y(coeff_vars[term][k]);
    return m;
  }
};

namespace detail {

inline MatrixXd unit_sym(int n, int i, int j) {
  MatrixXd E = MatrixXd::Zero(n, n);
  E(i, j) = E(j, i) = 1.0;
  return E;
}

/// Rate samples: v_points per basis-read coordinate spanning Pi, 0 elsewhere.
inline std::vector<VectorXd> rate_grid(const GridEmbedding& emb, const StorageBasis& basis, int v_points) {
  const int np = emb.map.dims();
  if (basis.sched_dims() != np) throw Error("storage basis scheduling dimension does not match the embedding");
  for (int k : basis.reads())
    if (!emb.map.state_mapped[static_cast<std::size_t>(k)])
      throw Error("storage basis reads input-mapped scheduling coordinate " + basis.sched_names()[static_cast<std::size_t>(k)] +
                  " whose rate set is unbounded");
  if (v_points < 1) throw Error("v grid needs at least one point");
  std::vector<VectorXd> out{VectorXd::Zero(np)};
  if (v_points == 1) return out;
  for (int k : basis.reads()) {
    std::vector<VectorXd> next;
    for (const auto& v : out)
      for (int i = 0; i < v_points; ++i) {
        VectorXd u = v;
        u(k) = emb.Pi.lo(k) + (emb.Pi.hi(k) - emb.Pi.lo(k)) * i / (v_points - 1);
        if (i == v_points - 1) u(k) = emb.Pi.hi(k);
        next.push_back(u);
      }
    out = std::move(next);
  }
  return out;
}

/// Block value given M(p+v), M(p) and gamma; must be affine in all three.
using BlockBuilder = std::function<MatrixXd(const EmbeddingPoint&, const MatrixXd&, const MatrixXd&, double)>;

inline LmiProgram assemble(const std::string& kind, const GridEmbedding& emb, const StorageBasis& basis,
                           const LmiOptions& opt, bool with_gamma, const BlockBuilder& build) {
  const int nx = emb.sys.n_x();
  LmiProgram prog;
  prog.kind = kind;
  prog.basis = basis;
  prog.n_x = nx;
  prog.options = opt;
  prog.region = emb.region;
  prog.grid_counts = emb.grid.counts();
  prog.v_points = rate_grid(emb, basis, opt.v_points);

  SdpProblem& sdp = prog.sdp;
  std::vector<MatrixXd> units;
  for (std::size_t t = 0; t < basis.size(); ++t) {
    std::vector<int> ids;
    for (int i = 0; i < nx; ++i)
      for (int j = i; j < nx; ++j) {
        ids.push_back(sdp.add_variable("M" + std::to_string(t) + "_" + std::to_string(i + 1) + std::to_string(j + 1)));
        if (t == 0) units.push_back(unit_sym(nx, i, j));
      }
    prog.coeff_vars.push_back(ids);
  }
  if (with_gamma) prog.gamma_var = sdp.add_variable("gamma");
  sdp.objective = VectorXd::Zero(sdp.num_vars);
  if (with_gamma) sdp.objective(prog.gamma_var) = 1.0;

  const std::size_t nv = prog.v_points.size();
  const std::size_t npairs = emb.points.size() * nv;
  prog.pairs = npairs;
  std::vector<LmiBlock> blocks(npairs);
  const MatrixXd Z = MatrixXd::Zero(nx, nx);
  parallel_chunks(npairs, 64, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t idx = b; idx < e; ++idx) {
      const EmbeddingPoint& pt = emb.points[idx / nv];
      const VectorXd& v = prog.v_points[idx % nv];
      const VectorXd phi = basis.values(pt.p), phin = basis.values(pt.p + v);
      LmiBlock blk;
      blk.constant = build(pt, Z, Z, 0.0);
      for (std::size_t t = 0; t < basis.size(); ++t)
        for (std::size_t u = 0; u < units.size(); ++u) {
          const double a = phin(static_cast<long>(t)), c = phi(static_cast<long>(t));
          if (a == 0.0 && c == 0.0) continue;
          MatrixXd F = build(pt, a * units[u], c * units[u], 0.0) - blk.constant;
          if (F.cwiseAbs().maxCoeff() > 0.0) blk.add(prog.coeff_vars[t][u], F);
        }
      if (with_gamma) {
        MatrixXd F = build(pt, Z, Z, 1.0) - blk.constant;
        blk.add(prog.gamma_var, F);
      }
      blocks[idx] = std::move(blk);
    }
  });
  sdp.blocks = std::move(blocks);

  // M(p) >= alpha1 I at each distinct basis value.
  std::map<std::vector<double>, VectorXd> distinct;
  for (const auto& pt : emb.points) {
    VectorXd phi = basis.values(pt.p);
    distinct.emplace(std::vector<double>(phi.data(), phi.data() + phi.size()), pt.p);
  }
  for (const auto& [key, p] : distinct) {
    prog.p_points.push_back(p);
    LmiBlock blk;
    blk.constant = -opt.alpha1 * MatrixXd::Identity(nx, nx);
    for (std::size_t t = 0; t < basis.size(); ++t)
      for (std::size_t u = 0; u < units.size(); ++u)
        if (key[t] != 0.0) blk.add(prog.coeff_vars[t][u], key[t] * units[u]);
    sdp.blocks.push_back(std::move(blk));
  }
  return prog;
}

}  // namespace detail

/// Expanded (Q,S,R)-DD condition with storage M(p); each grid block is stored
/// negated so that every block of the problem reads ">= 0".
inline LmiProgram assemble_dd_lmi(const GridEmbedding& emb, const StorageBasis& basis, const QSRSupply& supply,
                                  const LmiOptions& opt = {}, bool incremental_conclusion = true) {
  const int nw = emb.sys.n_w(), nz = emb.sys.n_z();
  if (supply.n_w() != nw || supply.n_z() != nz) throw Error("assemble_dd_lmi: supply dimensions do not match the system");
  if (incremental_conclusion && max_eig(supply.R) > 1e-12)
    throw Error("assemble_dd_lmi: R must be negative semidefinite for an incremental conclusion");
  const MatrixXd Q = supply.Q, S = supply.S, R = supply.R;
  auto build = [Q, S, R](const EmbeddingPoint& pt, const MatrixXd& Mn, const MatrixXd& M, double) {
    const auto& [A, B, C, D] = pt.forms;
    const long nx = A.rows(), nw = B.cols();
    MatrixXd blk(nx + nw, nx + nw);
    blk.topLeftCorner(nx, nx) = A.transpose() * Mn * A - M - C.transpose() * R * C;
    blk.topRightCorner(nx, nw) = A.transpose() * Mn * B - C.transpose() * (S.transpose() + R * D);
    blk.bottomLeftCorner(nw, nx) = blk.topRightCorner(nx, nw).transpose();
    blk.bottomRightCorner(nw, nw) = B.transpose() * Mn * B - (Q + S * D + D.transpose() * S.transpose() + D.transpose() * R * D);
    return MatrixXd(-sym(blk));
  };
  LmiProgram prog = detail::assemble("qsr-feasibility", emb, basis, opt, false, build);
  prog.form = StorageForm::Direct;
  return prog;
}

/// Four-block incremental l2-gain condition, affine in (M_i, gamma); minimizes gamma.
inline LmiProgram assemble_incremental_l2(const GridEmbedding& emb, const StorageBasis& basis, const LmiOptions& opt = {}) {
  auto build = [](const EmbeddingPoint& pt, const MatrixXd& Mn, const MatrixXd& M, double g) {
    const auto& [A, B, C, D] = pt.forms;
    const long nx = A.rows(), nw = B.cols(), nz = C.rows();
    const long n = 2 * nx + nw + nz;
    MatrixXd blk = MatrixXd::Zero(n, n);
    blk.block(0, 0, nx, nx) = Mn;
    blk.block(0, nx, nx, nx) = A * M;
    blk.block(0, 2 * nx, nx, nw) = B;
    blk.block(nx, nx, nx, nx) = M;
    blk.block(nx, 2 * nx + nw, nx, nz) = M * C.transpose();
    blk.block(2 * nx, 2 * nx, nw, nw) = g * MatrixXd::Identity(nw, nw);
    blk.block(2 * nx, 2 * nx + nw, nw, nz) = D.transpose();
    blk.block(2 * nx + nw, 2 * nx + nw, nz, nz) = g * MatrixXd::Identity(nz, nz);
    blk.triangularView<Eigen::StrictlyLower>() = blk.transpose();
    return blk;
  };
  LmiProgram prog = detail::assemble("incremental-l2", emb, basis, opt, true, build);
  prog.form = StorageForm::ScaledInverse;
  return prog;
}

/// Three-block incremental passivity condition (feasibility).
inline LmiProgram assemble_incremental_passivity(const GridEmbedding& emb, const StorageBasis& basis,
                                                 const LmiOptions& opt = {}) {
  if (emb.sys.n_w() != emb.sys.n_z())
    throw Error("assemble_incremental_passivity: requires n_w == n_z");
  auto build = [](const EmbeddingPoint& pt, const MatrixXd& Mn, const MatrixXd& M, double) {
    const auto& [A, B, C, D] = pt.forms;
    const long nx = A.rows(), nw = B.cols();
    MatrixXd blk = MatrixXd::Zero(2 * nx + nw, 2 * nx + nw);
    blk.block(0, 0, nx, nx) = Mn;
    blk.block(0, nx, nx, nx) = A * M;
    blk.block(0, 2 * nx, nx, nw) = B;
    blk.block(nx, nx, nx, nx) = M;
    blk.block(nx, 2 * nx, nx, nw) = M * C.transpose();
    blk.block(2 * nx, 2 * nx, nw, nw) = D + D.transpose();
    blk.triangularView<Eigen::StrictlyLower>() = blk.transpose();
    return blk;
  };
  LmiProgram prog = detail::assemble("incremental-passivity", emb, basis, opt, false, build);
  prog.form = StorageForm::ScaledInverse;
  return prog;
}

enum class CertStatus { Feasible, Infeasible, Inaccurate };

inline const char* to_string(CertStatus s) {
  switch (s) {
    case CertStatus::Feasible: return "feasible";
    case CertStatus::Infeasible: return "infeasible";
    case CertStatus::Inaccurate: return "inaccurate";
  }
  return "?";
}

struct Certificate {
  std::string kind;
  CertStatus status = CertStatus::Inaccurate;
  std::optional<double> gamma;
  StorageBasis basis;
  std::vector<MatrixXd> M;  // decision coefficients, one per basis term
  StorageForm form = StorageForm::Direct;
  double storage_scale = 1.0;
  double alpha1 = 1e-6;
  double alpha1_margin = 0.0;  // min over grid of lambda_min(M(p)) - alpha1
  double alpha2 = 0.0;         // max over grid of lambda_max(X(p))
  double post_check_min_eig = 0.0;
  double margin = 0.0;         // feasibility margin t* (feasibility kinds)
  Box region;
  std::vector<int> grid_counts;
  int v_points = 0;
  std::size_t pairs = 0;
  int iterations = 0;
  std::string solver, message;

  MatrixXd decision(const VectorXd& p) const { return basis.evaluate(M, p); }

  /// Certified storage matrix X(p).
  MatrixXd storage_metric(const VectorXd& p) const {
    MatrixXd m = decision(p);
    if (form == StorageForm::Direct) return m;
    return sym(storage_scale * m.inverse());
  }

  /// Storage coefficients when X is itself affine in the basis (constant basis only for inverse forms).
  std::vector<MatrixXd> storage_coefficients() const {
    if (form == StorageForm::Direct) return M;
    if (M.size() != 1) throw Error("storage_coefficients: inverse storage is not affine in a non-constant basis");
    return {sym(storage_scale * M[0].inverse())};
  }
};

inline constexpr double kPostCheckTolerance = 1e-7;

/// Solves the program; feasibility programs go through the margin
/// reformulation. Every block is re-checked at the returned point.
inline Certificate solve(const LmiProgram& prog, const SdpSolver& solver = InteriorPointSolver()) {
  const bool feas = prog.gamma_var < 0;
  SdpProblem p = feas ? with_feasibility_margin(prog.sdp) : prog.sdp;
  SdpResult r = solver.solve(p);

  Certificate cert;
  cert.kind = prog.kind;
  cert.basis = prog.basis;
  cert.form = prog.form;
  cert.alpha1 = prog.options.alpha1;
  cert.region = prog.region;
  cert.grid_counts = prog.grid_counts;
  cert.v_points = prog.options.v_points;
  cert.pairs = prog.pairs;
  cert.iterations = r.iterations;
  cert.solver = solver.name();
  cert.message = std::string(to_string(r.status)) + (r.message.empty() ? "" : ": " + r.message);

  if (r.status == SdpStatus::Infeasible) {
    cert.status = CertStatus::Infeasible;
    return cert;
  }
  if (r.y.size() < prog.sdp.num_vars) {
    cert.status = CertStatus::Inaccurate;
    return cert;
  }
  VectorXd y = r.y.head(prog.sdp.num_vars);
  for (std::size_t t = 0; t < prog.basis.size(); ++t) cert.M.push_back(prog.coefficient(y, t));
  if (!feas) {
    cert.gamma = y(prog.gamma_var);
    cert.storage_scale = prog.form == StorageForm::ScaledInverse ? *cert.gamma : 1.0;
  }
  cert.post_check_min_eig = prog.sdp.min_eigenvalue(y);

  double lmin = std::numeric_limits<double>::infinity(), xmax = 0.0;
  bool pd = true;
  for (const auto& pp : prog.p_points) {
    MatrixXd m = cert.decision(pp);
    const double e = min_eig(m);
    lmin = std::min(lmin, e);
    if (e <= 0.0) {
      pd = false;
      continue;
    }
    xmax = std::max(xmax, max_eig(cert.storage_metric(pp)));
  }
  cert.alpha1_margin = lmin - cert.alpha1;
  cert.alpha2 = xmax;

  if (feas) {
    cert.margin = r.y(p.num_vars - 1);
    if (r.status != SdpStatus::Optimal) cert.status = CertStatus::Inaccurate;
    else if (cert.margin > kPostCheckTolerance) cert.status = CertStatus::Infeasible;
    else cert.status = cert.post_check_min_eig >= -kPostCheckTolerance && pd ? CertStatus::Feasible : CertStatus::Inaccurate;
    return cert;
  }
  cert.status = r.status == SdpStatus::Optimal && cert.post_check_min_eig >= -kPostCheckTolerance && pd
                    ? CertStatus::Feasible
                    : CertStatus::Inaccurate;
  return cert;
}

/// With storage X(p) = sum_i phi_i(p) X_i fixed, compares the expanded
/// (gamma^2, 0, -I) dissipation inequality against the four-block form
/// evaluated at M = gamma X^{-1}, grid pair by grid pair.
inline bool schur_equivalence_check(const GridEmbedding& emb, const StorageBasis& basis, const std::vector<MatrixXd>& X,
                                    double gamma, int v_points = 3, double tol = 1e-8) {
  const auto vs = detail::rate_grid(emb, basis, v_points);
  const int nx = emb.sys.n_x(), nw = emb.sys.n_w(), nz = emb.sys.n_z();
  for (const auto& pt : emb.points) {
    const auto& [A, B, C, D] = pt.forms;
    const MatrixXd Xp = basis.evaluate(X, pt.p);
    for (const auto& v : vs) {
      const MatrixXd Xn = basis.evaluate(X, pt.p + v);
      MatrixXd E(nx + nw, nx + nw);
      E.topLeftCorner(nx, nx) = A.transpose() * Xn * A - Xp + C.transpose() * C;
      E.topRightCorner(nx, nw) = A.transpose() * Xn * B + C.transpose() * D;
      E.bottomLeftCorner(nw, nx) = E.topRightCorner(nx, nw).transpose();
      E.bottomRightCorner(nw, nw) = B.transpose() * Xn * B + D.transpose() * D - gamma * gamma * MatrixXd::Identity(nw, nw);
      const bool expanded_ok = max_eig(E) <= tol;

      bool dual_ok = false;
      if (gamma > 0.0 && min_eig(Xp) > 0.0 && min_eig(Xn) > 0.0) {
        const MatrixXd Mp = gamma * Xp.inverse(), Mn = gamma * Xn.inverse();
        const long n = 2 * nx + nw + nz;
        MatrixXd F = MatrixXd::Zero(n, n);
        F.block(0, 0, nx, nx) = Mn;
        F.block(0, nx, nx, nx) = A * Mp;
        F.block(0, 2 * nx, nx, nw) = B;
        F.block(nx, nx, nx, nx) = Mp;
        F.block(nx, 2 * nx + nw, nx, nz) = Mp * C.transpose();
        F.block(2 * nx, 2 * nx, nw, nw) = gamma * MatrixXd::Identity(nw, nw);
        F.block(2 * nx, 2 * nx + nw, nw, nz) = D.transpose();
        F.block(2 * nx + nw, 2 * nx + nw, nz, nz) = gamma * MatrixXd::Identity(nz, nz);
        F.triangularView<Eigen::StrictlyLower>() = F.transpose();
        dual_ok = min_eig(F) >= -tol;
      }
      if (expanded_ok != dual_ok) return false;
    }
  }
  return true;
}

}  // namespace eqfree

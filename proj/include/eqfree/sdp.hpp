#pragma once

// Linear matrix inequality problems
//
//   minimize  c'y   subject to  F0_k + sum_i y_i F_ik  >= 0  (PSD) for every block k
//
// and a primal-dual interior-point solver for them.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "eqfree/expr.hpp"
#include "eqfree/parallel.hpp"

namespace eqfree {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One affine matrix-valued constraint F0 + sum y_i F_i >= 0.
struct LmiBlock {
  MatrixXd constant;
  std::vector<std::pair<int, MatrixXd>> terms;  // (variable index, coefficient matrix)

  int size() const { return static_cast<int>(constant.rows()); }

  MatrixXd evaluate(const VectorXd& y) const {
    MatrixXd m = constant;
    for (const auto& [i, F] : terms) m += y(i) * F;
    return m;
  }

  /// Adds `coef * F` to the coefficient of variable `var`.
  void add(int var, const MatrixXd& F) {
    for (auto& [i, G] : terms)
      if (i == var) {
        G += F;
        return;
      }
    terms.emplace_back(var, F);
  }
};

struct SdpProblem {
  int num_vars = 0;
  VectorXd objective;  // minimized
  std::vector<LmiBlock> blocks;
  std::vector<std::string> var_names;

  int add_variable(std::string name) {
    var_names.push_back(std::move(name));
    ++num_vars;
    objective.conservativeResize(num_vars);
    objective(num_vars - 1) = 0.0;
    return num_vars - 1;
  }

  /// Smallest eigenvalue over all blocks at `y`.
  double min_eigenvalue(const VectorXd& y) const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : blocks) {
      MatrixXd v = b.evaluate(y);
      m = std::min(m, Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (v + v.transpose()), Eigen::EigenvaluesOnly)
                          .eigenvalues()
                          .minCoeff());
    }
    return m;
  }
};

/// Plain-text sparse export: header lines start with '#', then one line per
/// upper-triangular nonzero "block row col var coefficient", where var 0 is the
/// constant term and var i > 0 is decision variable i-1. Indices are 1-based.
inline void export_sparse(std::ostream& os, const SdpProblem& p) {
  os << "# eqfree sdp: minimize c'y s.t. F0_k + sum_i y_i F_ik >= 0\n";
  os << "# vars " << p.num_vars << " blocks " << p.blocks.size() << '\n';
  os << "# objective";
  for (int i = 0; i < p.num_vars; ++i) os << ' ' << format_double(p.objective(i));
  os << '\n';
  for (std::size_t k = 0; k < p.blocks.size(); ++k) {
    const auto& b = p.blocks[k];
    auto emit = [&](int var, const MatrixXd& F) {
      for (int r = 0; r < F.rows(); ++r)
        for (int c = r; c < F.cols(); ++c)
          if (F(r, c) != 0.0)
            os << k + 1 << ' ' << r + 1 << ' ' << c + 1 << ' ' << var << ' ' << format_double(F(r, c)) << '\n';
    };
    emit(0, b.constant);
    for (const auto& [i, F] : b.terms) emit(i + 1, F);
  }
}

enum class SdpStatus { Optimal, Infeasible, Inaccurate };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::Optimal: return "optimal";
    case SdpStatus::Infeasible: return "infeasible";
    default: return "inaccurate";
  }
}

struct SdpResult {
  SdpStatus status = SdpStatus::Inaccurate;
  VectorXd y;
  double objective = 0.0;
  double dual_objective = 0.0;
  int iterations = 0;
  std::string message;
};

struct SdpOptions {
  double tolerance = 1e-8;
  double relaxed_tolerance = 1e-6;  // accepted when progress stalls
  int stall_iterations = 15;
  int max_iterations = 200;
  double step_fraction = 0.95;
  double divergence_bound = 1e12;
};

/// Solver interface so alternative backends can be substituted.
class SdpSolver {
 public:
  virtual ~SdpSolver() = default;
  virtual SdpResult solve(const SdpProblem& problem) const = 0;
  virtual std::string name() const = 0;
};

/// Infeasible-start primal-dual path following with the HKM search direction
/// and Mehrotra predictor-corrector steps. Dense per block; the Schur
/// complement is dense in the decision variables.
class InteriorPointSolver : public SdpSolver {
 public:
  explicit InteriorPointSolver(SdpOptions opt = {}) : opt_(opt) {}

  std::string name() const override { return "eqfree-ipm-hkm"; }

  SdpResult solve(const SdpProblem& p) const override {
    const int m = p.num_vars;
    const std::size_t K = p.blocks.size();
    SdpResult res;
    if (K == 0) {
      res.status = SdpStatus::Inaccurate;
      res.message = "no constraint blocks";
      return res;
    }
    if (p.objective.size() != m) throw Error("SdpProblem: objective size mismatch");
    for (const auto& b : p.blocks)
      for (const auto& [i, F] : b.terms)
        if (i < 0 || i >= m || F.rows() != b.size() || F.cols() != b.size())
          throw Error("SdpProblem: malformed block term");

    // Starting point.
    double N = 0.0;
    for (const auto& b : p.blocks) N += b.size();
    std::vector<double> fnorm(static_cast<std::size_t>(m), 0.0);
    double f0norm = 0.0;
    for (const auto& b : p.blocks) {
      f0norm = std::max(f0norm, b.constant.norm());
      for (const auto& [i, F] : b.terms) fnorm[static_cast<std::size_t>(i)] += F.squaredNorm();
    }
    double xi_x = 10.0, xi_s = std::max(10.0, f0norm);
    for (int i = 0; i < m; ++i) {
      double fi = std::sqrt(fnorm[static_cast<std::size_t>(i)]);
      xi_x = std::max(xi_x, (1.0 + std::abs(p.objective(i))) / (1.0 + fi) * std::sqrt(N));
      xi_s = std::max(xi_s, fi);
    }
    xi_s = std::max(xi_s, std::sqrt(N));

    std::vector<MatrixXd> X(K), S(K);
    for (std::size_t k = 0; k < K; ++k) {
      const int n = p.blocks[k].size();
      X[k] = xi_x * MatrixXd::Identity(n, n);
      S[k] = xi_s * MatrixXd::Identity(n, n);
    }
    VectorXd y = VectorXd::Zero(m);
    const double cnorm = p.objective.norm();

    constexpr std::size_t kChunk = 64;
    const std::size_t nchunks = chunk_count(K, kChunk);

    std::vector<MatrixXd> Sinv(K), Rd(K), dX(K), dS(K), dXa(K), dSa(K);
    SdpResult best;
    double best_err = std::numeric_limits<double>::infinity();
    int best_it = 0;
    auto fallback = [&](const std::string& why) {
      if (best_err < opt_.relaxed_tolerance) {
        best.status = SdpStatus::Optimal;
        best.message = "converged to reduced accuracy (" + why + ")";
        best.iterations = res.iterations;
        return best;
      }
      res.status = SdpStatus::Inaccurate;
      res.message = why;
      return res;
    };
    for (int it = 0; it < opt_.max_iterations; ++it) {
      res.iterations = it;
      // Residuals and objectives.
      VectorXd rp = p.objective;
      double dobj = 0.0, mu_sum = 0.0, rd_norm2 = 0.0;
      {
        std::vector<VectorXd> rp_part(nchunks, VectorXd::Zero(m));
        std::vector<double> dobj_part(nchunks, 0.0), mu_part(nchunks, 0.0), rd_part(nchunks, 0.0);
        parallel_chunks(K, kChunk, [&](std::size_t b, std::size_t e, std::size_t c) {
          for (std::size_t k = b; k < e; ++k) {
            const auto& blk = p.blocks[k];
            for (const auto& [i, F] : blk.terms) rp_part[c](i) -= (F.cwiseProduct(X[k])).sum();
            dobj_part[c] -= (blk.constant.cwiseProduct(X[k])).sum();
            mu_part[c] += (X[k].cwiseProduct(S[k])).sum();
            Rd[k] = blk.evaluate(y) - S[k];
            rd_part[c] += Rd[k].squaredNorm();
          }
        });
        for (std::size_t c = 0; c < nchunks; ++c) {
          rp += rp_part[c];
          dobj += dobj_part[c];
          mu_sum += mu_part[c];
          rd_norm2 += rd_part[c];
        }
      }
      const double pobj = p.objective.dot(y);
      const double mu = mu_sum / N;
      const double relgap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
      const double pinf = rp.norm() / (1.0 + cnorm);
      const double dinf = std::sqrt(rd_norm2) / (1.0 + f0norm);
      res.y = y;
      res.objective = pobj;
      res.dual_objective = dobj;
      if (relgap < opt_.tolerance && pinf < opt_.tolerance && dinf < opt_.tolerance) {
        res.status = SdpStatus::Optimal;
        res.message = "converged";
        return res;
      }
      const double err = std::max({relgap, pinf, dinf});
      if (err < best_err) {
        best_err = err;
        best = res;
        best_it = it;
      } else if (it - best_it >= opt_.stall_iterations && best_err < opt_.relaxed_tolerance) {
        return fallback("no further progress");
      }
      if (y.norm() > opt_.divergence_bound) {
        res.status = SdpStatus::Inaccurate;
        res.message = "decision variables diverged (problem likely unbounded)";
        return res;
      }
      double xmax = 0.0;
      for (const auto& x : X) xmax = std::max(xmax, x.norm());
      if (xmax > opt_.divergence_bound) {
        res.status = SdpStatus::Infeasible;
        res.message = "dual multipliers diverged (constraints likely infeasible)";
        return res;
      }

      // Schur complement H_ij = sum_k tr(F_ik X_k F_jk S_k^{-1}).
      MatrixXd H = MatrixXd::Zero(m, m);
      {
        std::vector<MatrixXd> H_part(nchunks, MatrixXd::Zero(m, m));
        std::atomic<bool> failed{false};
        parallel_chunks(K, kChunk, [&](std::size_t b, std::size_t e, std::size_t c) {
          for (std::size_t k = b; k < e; ++k) {
            const auto& blk = p.blocks[k];
            Eigen::LLT<MatrixXd> llt(S[k]);
            if (llt.info() != Eigen::Success) {
              failed = true;
              return;
            }
            Sinv[k] = llt.solve(MatrixXd::Identity(blk.size(), blk.size()));
            for (const auto& [j, Fj] : blk.terms) {
              MatrixXd P = X[k] * Fj * Sinv[k];
              for (const auto& [i, Fi] : blk.terms)
                if (i <= j) H_part[c](i, j) += (Fi.cwiseProduct(P)).sum();
            }
          }
        });
        if (failed) return fallback("lost positive definiteness");
        for (std::size_t c = 0; c < nchunks; ++c) H += H_part[c];
        H = H.selfadjointView<Eigen::Upper>();
      }
      Eigen::LDLT<MatrixXd> ldlt(H);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        H.diagonal().array() += 1e-12 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
        ldlt.compute(H);
      }

      // Solves for a direction given G_k = target - X_k - corrector terms.
      auto direction = [&](const std::vector<MatrixXd>& G, std::vector<MatrixXd>& DX, std::vector<MatrixXd>& DS,
                           VectorXd& dy) {
        VectorXd rhs = -rp;
        std::vector<VectorXd> rhs_part(nchunks, VectorXd::Zero(m));
        parallel_chunks(K, kChunk, [&](std::size_t b, std::size_t e, std::size_t c) {
          for (std::size_t k = b; k < e; ++k) {
            MatrixXd T = G[k] - X[k] * Rd[k] * Sinv[k];
            for (const auto& [i, F] : p.blocks[k].terms) rhs_part[c](i) += (F.cwiseProduct(T)).sum();
          }
        });
        for (std::size_t c = 0; c < nchunks; ++c) rhs += rhs_part[c];
        dy = ldlt.solve(rhs);
        parallel_chunks(K, kChunk, [&](std::size_t b, std::size_t e, std::size_t) {
          for (std::size_t k = b; k < e; ++k) {
            DS[k] = Rd[k];
            for (const auto& [i, F] : p.blocks[k].terms) DS[k] += dy(i) * F;
            MatrixXd T = G[k] - X[k] * DS[k] * Sinv[k];
            DX[k] = 0.5 * (T + T.transpose());
          }
        });
      };

      // Predictor.
      std::vector<MatrixXd> G(K);
      for (std::size_t k = 0; k < K; ++k) G[k] = -X[k];
      VectorXd dya;
      direction(G, dXa, dSa, dya);
      double ap = max_step(X, dXa), ad = max_step(S, dSa);
      ap = std::min(1.0, opt_.step_fraction * ap);
      ad = std::min(1.0, opt_.step_fraction * ad);
      double mu_aff = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        mu_aff += ((X[k] + ap * dXa[k]).cwiseProduct(S[k] + ad * dSa[k])).sum();
      mu_aff /= N;
      double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);

      // Corrector.
      parallel_chunks(K, kChunk, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t k = b; k < e; ++k) {
          MatrixXd corr = dXa[k] * dSa[k] * Sinv[k];
          G[k] = sigma * mu * Sinv[k] - X[k] - 0.5 * (corr + corr.transpose());
        }
      });
      VectorXd dy;
      direction(G, dX, dS, dy);
      ap = std::min(1.0, opt_.step_fraction * max_step(X, dX));
      ad = std::min(1.0, opt_.step_fraction * max_step(S, dS));
      for (std::size_t k = 0; k < K; ++k) {
        X[k] += ap * dX[k];
        S[k] += ad * dS[k];
        X[k] = 0.5 * (X[k] + X[k].transpose());
        S[k] = 0.5 * (S[k] + S[k].transpose());
      }
      y += ad * dy;
    }
    return fallback("iteration limit reached");
  }

 private:
  SdpOptions opt_;

  // Largest a with M + a*D >= 0 for every block (infinity if unbounded).
  static double max_step(const std::vector<MatrixXd>& M, const std::vector<MatrixXd>& D) {
    constexpr std::size_t kChunk = 64;
    const std::size_t nchunks = chunk_count(M.size(), kChunk);
    std::vector<double> part(nchunks, std::numeric_limits<double>::infinity());
    parallel_chunks(M.size(), kChunk, [&](std::size_t b, std::size_t e, std::size_t c) {
      for (std::size_t k = b; k < e; ++k) {
        Eigen::LLT<MatrixXd> llt(M[k]);
        MatrixXd L = llt.matrixL();
        MatrixXd T = L.triangularView<Eigen::Lower>().solve(D[k]);
        T = L.triangularView<Eigen::Lower>().solve(T.transpose().eval());
        double lmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (T + T.transpose()), Eigen::EigenvaluesOnly)
                          .eigenvalues()
                          .minCoeff();
        if (lmin < 0.0) part[c] = std::min(part[c], -1.0 / lmin);
      }
    });
    return *std::min_element(part.begin(), part.end());
  }
};

/// Adds a margin variable t (minimized) entering every block as +t*I, with
/// t >= -1 and ||y|| <= radius, so that feasibility problems have a bounded,
/// strictly feasible reformulation. The original problem is strictly feasible
/// iff the optimal margin is negative.
inline SdpProblem with_feasibility_margin(const SdpProblem& p, double radius = 1e4) {
  SdpProblem q = p;
  const int t = q.add_variable("margin");
  q.objective.setZero();
  q.objective(t) = 1.0;
  for (auto& b : q.blocks) b.add(t, MatrixXd::Identity(b.size(), b.size()));
  LmiBlock lower;
  lower.constant = MatrixXd::Ones(1, 1);
  lower.add(t, MatrixXd::Ones(1, 1));
  q.blocks.push_back(std::move(lower));
  // [radius, y'; y, radius*I] >= 0  <=>  ||y|| <= radius (original variables only).
  const int n = p.num_vars;
  if (n > 0) {
    LmiBlock ball;
    ball.constant = radius * MatrixXd::Identity(n + 1, n + 1);
    for (int i = 0; i < n; ++i) {
      MatrixXd E = MatrixXd::Zero(n + 1, n + 1);
      E(0, i + 1) = E(i + 1, 0) = 1.0;
      ball.add(i, E);
    }
    q.blocks.push_back(std::move(ball));
  }
  return q;
}

}  // namespace eqfree

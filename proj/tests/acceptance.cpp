// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

#include "support.hpp"

using namespace eqfree;
using namespace testing_support;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

AnalyzeResult analyze(const AnalysisConfig& c) {
  std::ostringstream log;
  return run_analysis(c, log);
}

bool velocity_residual_ok(std::string& detail) {
  const DtSystem sys = duffing();
  std::mt19937 rng(101);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    VectorXd x(2), w(1), w1(1);
    x << u(rng), u(rng);
    w << u(rng);
    w1 << u(rng);
    worst = std::max(worst, velocity_residual(sys, sys.next_state(x, w), w1, x, w));
  }
  detail = fmt("velocity residual max %.2e", worst);
  return worst < 1e-9;
}

bool ad_vs_fd_ok(std::string& detail) {
  std::mt19937 rng(102);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  double worst = 0.0;
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    Expr e = random_expr(rng, 3, 1 + i % 5);
    std::vector<double> p{u(rng), u(rng), u(rng)};
    for (int k = 0; k < 3; ++k) {
      const double d = eval(diff(e, k), p);
      const double h = 1e-5 * std::max(1.0, std::abs(p[static_cast<std::size_t>(k)]));
      auto at = [&](double s) {
        auto q = p;
        q[static_cast<std::size_t>(k)] += s;
        return eval(e, q);
      };
      const double fd1 = (at(h) - at(-h)) / (2 * h), fd2 = (at(2 * h) - at(-2 * h)) / (4 * h);
      const double rich = (4 * fd1 - fd2) / 3;
      if (!std::isfinite(rich) || std::abs(d) > 1e8) continue;
      worst = std::max(worst, std::abs(d - rich) / std::max(1.0, std::abs(d)));
      ++checked;
    }
  }
  detail = fmt("AD vs FD max rel err %.2e over %d derivatives", worst, checked);
  return worst < 1e-6 && checked > 500;
}

bool geodesic_ok(const Certificate& cert, const SchedulingMap& map, std::string& detail) {
  CertificateMetric G(cert, map, 2, 1);
  std::mt19937 rng(103);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  double worst_excess = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < 30; ++i) {
    Eigen::Vector2d a(u(rng), u(rng)), b(u(rng), u(rng));
    GeodesicResult r = geodesic(G, a, b);
    worst_excess = std::max(worst_excess, r.energy - r.straight_energy);
  }
  MatrixXd M(2, 2);
  M << 2.0, 0.4, 0.4, 0.7;
  ConstantMetric C(M);
  double worst_const = 0.0;
  for (int i = 0; i < 30; ++i) {
    Eigen::Vector2d a(u(rng), u(rng)), b(u(rng), u(rng));
    const double q = (a - b).dot(M * (a - b));
    worst_const = std::max(worst_const, std::abs(geodesic(C, a, b).energy - q));
  }
  detail += fmt("; geodesic - straight max %.2e; constant-M error %.2e", worst_excess, worst_const);
  return worst_excess <= 0.0 && worst_const <= 1e-10;
}

bool shifted_ok(std::string& detail) {
  const AnalysisConfig cfg = load_config(std::string(EQFREE_CONFIG_DIR) + "/duffing-shifted.json");
  AnalyzeResult res = analyze(cfg);
  if (res.certificate.status != CertStatus::Feasible) {
    detail += "; shifted certificate not feasible";
    return false;
  }
  const DtSystem sys = make_system(cfg.system);
  InvariantSet set = level_set_fit(shifted_lyapunov(sys, res.certificate.storage_metric(VectorXd::Zero(3)), VectorXd::Zero(1)),
                                   cfg.region().slice(0, 2));
  std::mt19937 rng(104);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_increase = -std::numeric_limits<double>::infinity();
  int exits = 0, runs = 0;
  while (runs < 50) {
    VectorXd x(2);
    x << u(rng), u(rng);
    if (!set.contains(x)) continue;
    ++runs;
    double v = set.lyap(x);
    for (int k = 0; k < 600; ++k) {
      x = sys.next_state(x, VectorXd::Zero(1));
      const double vn = set.lyap(x);
      worst_increase = std::max(worst_increase, vn - v);
      v = vn;
      if (!set.region.contains(x)) ++exits;
    }
  }
  detail += fmt("; V_s max increase %.2e over 50 runs, region exits %d (level %.5g)", worst_increase, exits, set.level);
  return worst_increase <= 1e-9 && exits == 0;
}

bool usp_ok(std::string& detail) {
  bool ok = usp_bound(4.0, 1.0, 2.0).gamma_tilde == 4.0 && usp_bound(1.0, 1.0, 0.3).gamma_tilde == 0.3 &&
            usp_bound(9.0, 2.0, 0.5).gamma_tilde == 3.0 && usp_bound(1.0, 0.0, 5.0).gamma_tilde == 0.0;
  detail += ok ? "; usp_bound identities exact" : "; usp_bound identities violated";
  return ok;
}

}  // namespace

int main() {
  const std::string dir = EQFREE_CONFIG_DIR;
  const AnalysisConfig duff = load_config(dir + "/duffing.json");

  // Duffing with state-dependent storage.
  const auto t0 = std::chrono::steady_clock::now();
  AnalyzeResult sd = analyze(duff);
  const double t_sd = seconds_since(t0);
  const bool sd_ok = sd.certificate.status == CertStatus::Feasible;
  const double g_sd = sd_ok ? *sd.certificate.gamma : NAN;
  report(sd_ok && g_sd >= 0.10 && g_sd <= 0.16 && t_sd < 300.0, "duffing-state-dependent-gamma",
         fmt("gamma %.6f (target [0.10, 0.16]), %zu grid pairs, %.1f s", g_sd, sd.certificate.pairs, t_sd));

  // Same grids, constant storage.
  AnalysisConfig constant = duff;
  constant.basis.clear();
  AnalyzeResult cs = analyze(constant);
  const bool cs_ok = cs.certificate.status == CertStatus::Feasible;
  const double g_c = cs_ok ? *cs.certificate.gamma : NAN;
  report(cs_ok && g_c >= 0.37 && g_c <= 0.47 && g_c > g_sd, "duffing-constant-gamma",
         fmt("gamma %.6f (target [0.37, 0.47]), exceeds state-dependent %.6f", g_c, g_sd));

  // Increment set.
  {
    const Box region = duff.region();
    const Box d = estimate_dset(make_system(duff.system), region, Grid(region, duff.grids.dset_points), 1.0);
    const double want[2] = {0.011, 0.23};
    double worst = 0.0;
    for (int i = 0; i < 2; ++i) {
      worst = std::max(worst, std::abs(d.hi(i) - want[i]) / want[i]);
      worst = std::max(worst, std::abs(-d.lo(i) - want[i]) / want[i]);
    }
    report(worst <= 0.10, "duffing-dset",
           fmt("[%.5f, %.5f] x [%.5f, %.5f], worst bound deviation %.1f%%", d.lo(0), d.hi(0), d.lo(1), d.hi(1), 100 * worst));
  }

  // Linear systems against the frequency sweep.
  {
    std::mt19937 rng(2024);
    double worst = 0.0;
    int bad = 0;
    for (int i = 0; i < 20; ++i) {
      const int nx = 1 + i % 4, nw = 1 + (i / 4) % 2, nz = 1 + (i / 8) % 2;
      LtiSample s = random_stable_lti(rng, nx, nw, nz);
      GridEmbedding emb = lti_embedding(lti(s.A, s.B, s.C, s.D));
      Certificate c = solve(assemble_incremental_l2(emb, StorageBasis({}, emb.map.names)));
      if (c.status != CertStatus::Feasible) {
        ++bad;
        continue;
      }
      const double h = hinf_sweep(s.A, s.B, s.C, s.D);
      worst = std::max(worst, std::abs(*c.gamma - h) / h);
    }
    const MatrixXd one = MatrixXd::Ones(1, 1);
    GridEmbedding emb = lti_embedding(lti(0.5 * one, one, one, 0.0 * one));
    Certificate c = solve(assemble_incremental_l2(emb, StorageBasis({}, emb.map.names)));
    const double g = c.gamma.value_or(NAN);
    const double m = c.status == CertStatus::Feasible ? c.storage_metric(VectorXd::Zero(2))(0, 0) : NAN;
    // Expanded dissipation inequality with storage m at gain g.
    Eigen::Matrix2d E;
    E << 0.25 * m - m + 1.0, 0.5 * m, 0.5 * m, m - g * g;
    const double emax = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(E).eigenvalues().maxCoeff();
    report(bad == 0 && worst <= 5e-3 && std::abs(g - 2.0) <= 2e-3 && std::abs(m - 2.0) <= 0.05 && emax <= 1e-6,
           "lti-gain-equivalence",
           fmt("20 systems, %d unsolved, worst rel err %.2e; scalar gamma %.6f, m %.5f, expanded max eig %.1e", bad, worst, g,
               m, emax));
  }

  // Incremental dissipation along the forced trajectory pair.
  if (sd_ok) {
    const DtSystem sys = make_system(duff.system);
    const SchedulingMap map = make_scheduling_map(sys.vars());
    const ScenarioSpec& sc = duff.scenarios.front();
    const auto t1 = std::chrono::steady_clock::now();
    const Trajectory a = simulate_spec(sys, sc.run, duff.system.ts, sc.horizon);
    const Trajectory b = simulate_spec(sys, *sc.reference, duff.system.ts, sc.horizon);
    IdReport rep = verify_id(CertificateMetric(sd.certificate, map, 2, 1), QSRSupply::l2_gain(g_sd, 1, 1), a, b, duff.region());
    report(rep.min_margin() >= -1e-6 && rep.dist.back() < 1e-3 && rep.size() == static_cast<std::size_t>(sc.horizon) + 1,
           "duffing-incremental-dissipation",
           fmt("min margin %.3e over t = 0..%d, final distance %.3e, region violations %zu, %.1f s", rep.min_margin(),
               sc.horizon, rep.dist.back(), rep.region_violations.size(), seconds_since(t1)));
  } else {
    report(false, "duffing-incremental-dissipation", "no state-dependent certificate");
  }

  // Property suites.
  {
    std::string detail, d2;
    bool ok = velocity_residual_ok(detail);
    ok = ad_vs_fd_ok(d2) && ok;
    detail += "; " + d2;
    if (sd_ok) {
      const DtSystem sys = make_system(duff.system);
      ok = geodesic_ok(sd.certificate, make_scheduling_map(sys.vars()), detail) && ok;
    } else {
      ok = false;
    }
    ok = shifted_ok(detail) && ok;
    ok = usp_ok(detail) && ok;
    report(ok, "property-suites", detail);
  }

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

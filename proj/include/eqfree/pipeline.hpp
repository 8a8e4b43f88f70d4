#pragma once

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "eqfree/certificates.hpp"
#include "eqfree/config.hpp"
#include "eqfree/incremental.hpp"
#include "eqfree/lmi.hpp"
#include "eqfree/sets.hpp"

namespace eqfree {

/// Process exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitSolver = 2,
  kExitInfeasible = 3,
  kExitHashMismatch = 4,
  kExitDiverged = 5,
  kExitVerifyFailed = 6,
};

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

/// Canonical text of a system: kind, ts, dimensions and the parsed expressions
/// printed over positional names, so whitespace and variable naming do not matter.
inline std::string canonical_system(const SystemSpec& s) {
  VarList given, positional;
  for (const auto& n : s.states) given.push_back(n);
  for (const auto& n : s.inputs) given.push_back(n);
  for (std::size_t i = 0; i < s.states.size(); ++i) positional.push_back("x" + std::to_string(i + 1));
  for (std::size_t i = 0; i < s.inputs.size(); ++i) positional.push_back("w" + std::to_string(i + 1));
  std::ostringstream os;
  os << "kind " << s.kind << "\nts " << format_double(s.kind == "dt" ? 0.0 : s.ts) << "\ndims " << s.states.size() << ' '
     << s.inputs.size() << ' ' << s.h.size() << '\n';
  for (const auto& e : s.f) os << "f " << to_string(parse(e, given), positional) << '\n';
  for (const auto& e : s.h) os << "h " << to_string(parse(e, given), positional) << '\n';
  return os.str();
}

inline std::string system_hash(const SystemSpec& s) { return sha256_hex(canonical_system(s)); }

inline json box_json(const Box& b) {
  return {{"lo", std::vector<double>(b.lo.data(), b.lo.data() + b.lo.size())},
          {"hi", std::vector<double>(b.hi.data(), b.hi.data() + b.hi.size())}};
}

inline const char* to_string(StorageForm f) { return f == StorageForm::Direct ? "direct" : "scaled-inverse"; }

inline json certificate_json(const Certificate& c) {
  json j;
  j["kind"] = c.kind;
  j["status"] = to_string(c.status);
  j["gamma"] = c.gamma ? json(*c.gamma) : json(nullptr);
  j["basis"] = c.basis.terms();
  json M = json::array();
  for (const auto& m : c.M) M.push_back(from_matrix(m));
  j["M"] = M;
  j["storage_form"] = to_string(c.form);
  j["storage_scale"] = c.storage_scale;
  j["alpha1"] = c.alpha1;
  j["alpha1_margin"] = c.alpha1_margin;
  j["alpha2"] = c.alpha2;
  j["post_check_min_eig"] = c.post_check_min_eig;
  if (c.gamma == std::nullopt) j["feasibility_margin"] = c.margin;
  j["region"] = box_json(c.region);
  j["grid"] = {{"p_counts", c.grid_counts}, {"v_points", c.v_points}, {"pairs", c.pairs}};
  j["solver"] = {{"name", c.solver}, {"iterations", c.iterations}, {"message", c.message}};
  return j;
}

/// Reads back the parts of a certificate needed to evaluate its storage.
inline Certificate certificate_from_json(const json& j, const VarList& sched_names) {
  try {
    Certificate c;
    c.kind = j.at("kind").get<std::string>();
    const auto st = j.at("status").get<std::string>();
    c.status = st == "feasible" ? CertStatus::Feasible : st == "infeasible" ? CertStatus::Infeasible : CertStatus::Inaccurate;
    if (!j.at("gamma").is_null()) c.gamma = j.at("gamma").get<double>();
    auto terms = j.at("basis").get<std::vector<std::string>>();
    if (!terms.empty() && terms.front() == "1") terms.erase(terms.begin());
    c.basis = StorageBasis(terms, sched_names);
    for (const auto& m : j.at("M")) c.M.push_back(to_matrix(m.get<RealMatrix>()));
    if (c.M.size() != c.basis.size()) throw ConfigError("certificate: M count does not match basis");
    c.form = j.at("storage_form").get<std::string>() == "direct" ? StorageForm::Direct : StorageForm::ScaledInverse;
    c.storage_scale = j.at("storage_scale").get<double>();
    c.alpha1 = j.at("alpha1").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("certificate: ") + e.what());
  }
}

struct CommandOptions {
  std::optional<std::string> out_dir;
  std::optional<int> grid, v_grid, quad_nodes;
  std::optional<double> alpha1;
};

/// Config with command-line overrides applied.
inline AnalysisConfig apply_overrides(AnalysisConfig c, const CommandOptions& o) {
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.grid) c.grids.p_points = *o.grid;
  if (o.v_grid) c.grids.v_points = *o.v_grid;
  if (o.quad_nodes) c.grids.quad_nodes = *o.quad_nodes;
  if (o.alpha1) c.analysis.alpha1 = *o.alpha1;
  if (c.grids.p_points < 2 || c.grids.v_points < 1 || c.grids.quad_nodes < 2 || !(c.analysis.alpha1 > 0.0))
    throw ConfigError("overrides: --grid >= 2, --v-grid >= 1, --quad-nodes >= 2, --alpha1 > 0 required");
  return c;
}

inline GridEmbedding embed(const AnalysisConfig& c, const DtSystem& sys) {
  EmbeddingOptions eo;
  eo.grid_points = c.grids.p_points;
  eo.dset_grid_points = c.grids.dset_points;
  eo.inflation = c.grids.inflation;
  SchedulingMap map = make_scheduling_map(sys.vars(), c.scheduling);
  if (c.input_rate) {
    if (static_cast<int>(c.input_rate->size()) != map.dims())
      throw ConfigError("region.input_rate: one interval per scheduling coordinate required");
    VectorXd lo(map.dims()), hi(map.dims());
    for (int k = 0; k < map.dims(); ++k) lo(k) = (*c.input_rate)[static_cast<std::size_t>(k)].first, hi(k) = (*c.input_rate)[static_cast<std::size_t>(k)].second;
    eo.input_rate_bounds = Box(lo, hi);
  }
  return build_embedding(sys, c.region(), map, eo);
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << text;
}

struct AnalyzeResult {
  Certificate certificate;
  json document;
  int exit_code = kExitOk;
};

/// embed -> assemble -> solve -> certificate (plus shifted-stability extras).
inline AnalyzeResult run_analysis(const AnalysisConfig& c, std::ostream& log) {
  const DtSystem sys = make_system(c.system);
  const GridEmbedding emb = embed(c, sys);
  StorageBasis basis(c.basis, emb.map.names);
  LmiOptions lo{c.analysis.alpha1, c.grids.v_points};
  const std::string& kind = c.analysis.kind;
  LmiProgram prog;
  if (kind == "incremental-l2") {
    prog = assemble_incremental_l2(emb, basis, lo);
  } else if (kind == "incremental-passivity") {
    prog = assemble_incremental_passivity(emb, basis, lo);
  } else if (kind == "qsr-feasibility") {
    prog = assemble_dd_lmi(emb, basis, QSRSupply(to_matrix(c.analysis.Q), to_matrix(c.analysis.S), to_matrix(c.analysis.R)),
                           lo, c.analysis.incremental);
  } else {
    if (!basis.is_constant()) throw ConfigError("universal-shifted-l2 requires a constant storage (empty storage_basis)");
    prog = assemble_incremental_l2(emb, basis, lo);
    prog.kind = kind;
  }
  log << "assembled " << prog.sdp.blocks.size() << " LMI blocks, " << prog.sdp.num_vars << " variables\n";

  AnalyzeResult res;
  res.certificate = solve(prog);
  const Certificate& cert = res.certificate;
  res.document = certificate_json(cert);
  res.document["system_hash"] = system_hash(c.system);
  res.document["scheduling"] = c.scheduling;
  res.document["dset"] = box_json(emb.dset);
  res.document["rate_box"] = box_json(emb.Pi);

  if (cert.status == CertStatus::Infeasible) res.exit_code = kExitInfeasible;
  else if (cert.status == CertStatus::Inaccurate) res.exit_code = kExitSolver;
  if (res.exit_code != kExitOk || kind != "universal-shifted-l2") return res;

  // Shifted stability extras for the constant velocity storage.
  const int nx = sys.n_x(), nw = sys.n_w();
  VectorXd w_star = VectorXd::Zero(nw);
  if (!c.analysis.w_star.empty()) {
    if (static_cast<int>(c.analysis.w_star.size()) != nw) throw ConfigError("analysis.w_star: wrong dimension");
    w_star = Eigen::Map<const VectorXd>(c.analysis.w_star.data(), nw);
  }
  const Box xbox = emb.region.slice(0, nx);
  const Equilibrium eq = find_equilibrium(sys, w_star, xbox.center());
  const MatrixXd M0 = cert.storage_coefficients()[0];
  const ShiftedLyapunov lyap = shifted_lyapunov(sys, M0, w_star);
  res.document["equilibrium"] = {{"x", std::vector<double>(eq.x.data(), eq.x.data() + nx)},
                                 {"w", c.analysis.w_star.empty() ? std::vector<double>(static_cast<std::size_t>(nw), 0.0) : c.analysis.w_star},
                                 {"residual", eq.residual},
                                 {"locally_unique", eq.jacobian_nonsingular}};
  if (!eq.jacobian_nonsingular) log << "warning: equilibrium Jacobian is singular; local uniqueness not established\n";
  try {
    const InvariantSet set = level_set_fit(lyap, xbox, c.analysis.level_set_samples);
    res.document["level_set"] = set.level;
  } catch (const DegenerateLevelSet& e) {
    log << "warning: " << e.what() << '\n';
    res.document["level_set"] = 0.0;
  }
  if (c.analysis.alpha) {
    const AlphaSpec& as = *c.analysis.alpha;
    Box xs = xbox;
    if (!as.xstar.empty()) {
      AnalysisConfig tmp;
      tmp.x_region = as.xstar;
      xs = tmp.region();
    }
    const AlphaEstimate ae = estimate_alpha(sys, to_matrix(as.B), to_matrix(as.C),
                                            -MatrixXd::Identity(sys.n_z(), sys.n_z()), xbox, xs, as.points,
                                            c.grids.quad_nodes);
    res.document["alpha"] = ae.alpha;
    res.document["alpha_sampled"] = ae.sampled;
    if (c.analysis.beta) {
      const UspBound ub = usp_bound(ae.alpha, *c.analysis.beta, *cert.gamma);
      res.document["beta"] = ub.beta;
      res.document["gamma_tilde"] = ub.gamma_tilde;
    }
  }
  return res;
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UnknownIdentifier& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SimulationDiverged& e) {
    err << "simulation diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const EquilibriumNotFound& e) {
    err << "solver failure: " << e.what() << '\n';
    return kExitSolver;
  } catch (const DomainError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

inline int cmd_analyze(const AnalysisConfig& config, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const AnalysisConfig c = apply_overrides(config, opt);
    AnalyzeResult r = run_analysis(c, out);
    const Certificate& cert = r.certificate;
    out << "status: " << to_string(cert.status) << '\n';
    if (cert.gamma) out << "gamma: " << format_double(*cert.gamma) << '\n';
    else out << "feasibility margin: " << format_double(cert.margin) << '\n';
    for (const char* k : {"level_set", "alpha", "gamma_tilde"})
      if (r.document.contains(k)) out << k << ": " << format_double(r.document[k].get<double>()) << '\n';
    const auto path = std::filesystem::path(c.out_dir) / "certificate.json";
    write_file(path, r.document.dump(2) + "\n");
    out << "certificate: " << path.string() << '\n';
    if (r.exit_code == kExitSolver) err << "solver failure: " << cert.message << '\n';
    return r.exit_code;
  });
}

inline int cmd_dset(const AnalysisConfig& config, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const AnalysisConfig c = apply_overrides(config, opt);
    const DtSystem sys = make_system(c.system);
    const Box region = c.region();
    const Box d = estimate_dset(sys, region, Grid(region, c.grids.dset_points), c.grids.inflation);
    for (int i = 0; i < d.dims(); ++i)
      out << c.system.states[static_cast<std::size_t>(i)] << ": [" << format_double(d.lo(i)) << ", "
          << format_double(d.hi(i)) << "]\n";
    json j = box_json(d);
    j["grid"] = c.grids.dset_points;
    j["inflation"] = c.grids.inflation;
    write_file(std::filesystem::path(c.out_dir) / "dset.json", j.dump(2) + "\n");
    return static_cast<int>(kExitOk);
  });
}

inline Trajectory simulate_spec(const DtSystem& sys, const TrajectorySpec& t, double ts, int horizon) {
  if (static_cast<int>(t.x0.size()) != sys.n_x()) throw ConfigError("scenario: x0 has wrong dimension");
  const VectorXd x0 = Eigen::Map<const VectorXd>(t.x0.data(), sys.n_x());
  return simulate(sys, x0, sample_inputs(t.w, sys.n_w(), ts, horizon), horizon);
}

inline void write_trajectory(const std::filesystem::path& p, const Trajectory& tr) {
  std::ostringstream os;
  write_csv(os, tr);
  write_file(p, os.str());
}

inline int cmd_simulate(const AnalysisConfig& config, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const AnalysisConfig c = apply_overrides(config, opt);
    const DtSystem sys = make_system(c.system);
    const std::filesystem::path dir(c.out_dir);
    for (const auto& s : c.scenarios) {
      const double ts = c.system.kind == "dt" ? 1.0 : c.system.ts;
      write_trajectory(dir / ("traj_" + s.name + ".csv"), simulate_spec(sys, s.run, ts, s.horizon));
      if (s.reference) write_trajectory(dir / ("traj_" + s.name + "_ref.csv"), simulate_spec(sys, *s.reference, ts, s.horizon));
      out << "scenario " << s.name << ": " << s.horizon << " steps\n";
    }
    return static_cast<int>(kExitOk);
  });
}

inline int cmd_verify(const AnalysisConfig& config, const std::string& certificate_path, const CommandOptions& opt,
                      std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const AnalysisConfig c = apply_overrides(config, opt);
    std::ifstream in(certificate_path);
    if (!in) throw ConfigError("cannot open certificate '" + certificate_path + "'");
    json cj;
    try {
      in >> cj;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("certificate is not valid JSON: ") + e.what());
    }
    if (!cj.contains("system_hash") || cj["system_hash"] != system_hash(c.system)) {
      err << "certificate does not match the configured system (hash mismatch)\n";
      return static_cast<int>(kExitHashMismatch);
    }
    const DtSystem sys = make_system(c.system);
    const SchedulingMap map = make_scheduling_map(sys.vars(), cj.value("scheduling", std::vector<std::string>{}));
    const Certificate cert = certificate_from_json(cj, map.names);
    if (cert.status != CertStatus::Feasible) {
      err << "certificate status is " << to_string(cert.status) << "; nothing to verify\n";
      return static_cast<int>(kExitInfeasible);
    }
    QSRSupply supply;
    if (cert.kind == "incremental-passivity") supply = QSRSupply::passivity(sys.n_w());
    else if (cert.kind == "qsr-feasibility")
      supply = QSRSupply(to_matrix(c.analysis.Q), to_matrix(c.analysis.S), to_matrix(c.analysis.R));
    else if (cert.gamma) supply = QSRSupply::l2_gain(*cert.gamma, sys.n_w(), sys.n_z());
    else throw ConfigError("certificate: no supply can be derived");

    const CertificateMetric metric(cert, map, sys.n_x(), sys.n_w());
    const std::filesystem::path dir(c.out_dir);
    const double ts = c.system.kind == "dt" ? 1.0 : c.system.ts;
    bool failed = false;
    int verified = 0;
    for (const auto& s : c.scenarios) {
      if (!s.reference) continue;
      const Trajectory a = simulate_spec(sys, s.run, ts, s.horizon);
      const Trajectory b = simulate_spec(sys, *s.reference, ts, s.horizon);
      const IdReport rep = verify_id(metric, supply, a, b, c.region());
      std::ostringstream os;
      write_csv(os, rep);
      write_file(dir / ("id_" + s.name + ".csv"), os.str());
      write_trajectory(dir / ("traj_" + s.name + ".csv"), a);
      write_trajectory(dir / ("traj_" + s.name + "_ref.csv"), b);
      double scale = 1.0;
      for (double v : rep.cumulative) scale = std::max(scale, std::abs(v));
      const double mm = rep.min_margin();
      out << "scenario " << s.name << ": min margin " << format_double(mm) << ", initial storage "
          << format_double(rep.Vi.front()) << ", final distance " << format_double(rep.dist.back()) << '\n';
      if (!rep.region_violations.empty())
        err << "warning: scenario " << s.name << " leaves the analysis region at " << rep.region_violations.size()
            << " samples (first t=" << rep.region_violations.front() << ")\n";
      if (mm < -1e-6 * scale) failed = true;
      ++verified;
    }
    if (verified == 0) err << "warning: no scenario with a reference trajectory\n";
    return static_cast<int>(failed ? kExitVerifyFailed : kExitOk);
  });
}

}  // namespace eqfree

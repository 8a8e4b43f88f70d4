#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eqfree/lmi.hpp"
#include "eqfree/sets.hpp"
#include "eqfree/system.hpp"

namespace eqfree {

using json = nlohmann::json;

class ConfigError : public Error {
 public:
  using Error::Error;
};

using Interval = std::pair<double, double>;
using RealMatrix = std::vector<std::vector<double>>;

struct SystemSpec {
  std::string kind = "dt";  // "dt" | "ct-rk4"
  double ts = 0.0;
  std::vector<std::string> states, inputs;
  std::vector<std::string> f, h;

  bool operator==(const SystemSpec&) const = default;
};

struct GridSpec {
  int p_points = 9;
  int v_points = 3;
  int dset_points = 41;
  int quad_nodes = 8;
  double inflation = 1.05;

  bool operator==(const GridSpec&) const = default;
};

struct AlphaSpec {
  RealMatrix B, C;
  int points = 21;
  std::vector<Interval> xstar;  // equilibrium box; defaults to the state region

  bool operator==(const AlphaSpec&) const = default;
};

struct AnalysisSpec {
  std::string kind = "incremental-l2";
  double alpha1 = 1e-6;
  RealMatrix Q, S, R;               // qsr-feasibility
  bool incremental = true;          // qsr-feasibility: refuse R not <= 0
  std::vector<double> w_star;       // universal-shifted-l2
  std::optional<double> beta;
  std::optional<AlphaSpec> alpha;
  int level_set_samples = 200;

  bool operator==(const AnalysisSpec&) const = default;
};

struct TrajectorySpec {
  std::vector<double> x0;
  std::vector<std::string> w;  // expressions of t (seconds) and k (sample index)

  bool operator==(const TrajectorySpec&) const = default;
};

struct ScenarioSpec {
  std::string name;
  int horizon = 0;
  TrajectorySpec run;
  std::optional<TrajectorySpec> reference;

  bool operator==(const ScenarioSpec&) const = default;
};

struct AnalysisConfig {
  std::string name;
  SystemSpec system;
  std::vector<Interval> x_region, w_region;
  std::vector<std::string> scheduling;  // empty: p = col(x, w)
  std::optional<std::vector<Interval>> input_rate;
  GridSpec grids;
  std::vector<std::string> basis;
  AnalysisSpec analysis;
  std::vector<ScenarioSpec> scenarios;
  std::string out_dir = "out";

  bool operator==(const AnalysisConfig&) const = default;

  Box region() const {
    VectorXd lo(static_cast<long>(x_region.size() + w_region.size())), hi(lo.size());
    long i = 0;
    for (const auto& r : x_region) lo(i) = r.first, hi(i++) = r.second;
    for (const auto& r : w_region) lo(i) = r.first, hi(i++) = r.second;
    return Box(lo, hi);
  }
};

inline const char* const kAnalysisKinds[] = {"incremental-l2", "incremental-passivity", "qsr-feasibility",
                                              "universal-shifted-l2"};

namespace config_detail {

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

inline std::vector<Interval> intervals(const json& j, const std::string& where) {
  std::vector<Interval> out;
  if (!j.is_array()) throw ConfigError(where + ": expected an array of [lo, hi]");
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
      throw ConfigError(where + ": each interval must be [lo, hi]");
    const double lo = e[0].get<double>(), hi = e[1].get<double>();
    if (!(lo <= hi)) throw ConfigError(where + ": interval with lo > hi");
    out.emplace_back(lo, hi);
  }
  return out;
}

inline json intervals_json(const std::vector<Interval>& v) {
  json a = json::array();
  for (const auto& [lo, hi] : v) a.push_back({lo, hi});
  return a;
}

inline RealMatrix matrix(const json& j, const std::string& where) {
  RealMatrix m;
  try {
    m = j.get<RealMatrix>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": expected a matrix (array of rows)");
  }
  for (const auto& r : m)
    if (r.size() != m.front().size()) throw ConfigError(where + ": ragged matrix");
  return m;
}

inline TrajectorySpec trajectory(const json& j, const std::string& where) {
  TrajectorySpec t;
  t.x0 = get<std::vector<double>>(j, "x0", where);
  t.w = get<std::vector<std::string>>(j, "w", where);
  return t;
}

inline json trajectory_json(const TrajectorySpec& t) { return {{"x0", t.x0}, {"w", t.w}}; }

}  // namespace config_detail

inline MatrixXd to_matrix(const RealMatrix& m) {
  if (m.empty()) return MatrixXd();
  MatrixXd out(static_cast<long>(m.size()), static_cast<long>(m.front().size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) out(static_cast<long>(i), static_cast<long>(j)) = m[i][j];
  return out;
}

inline RealMatrix from_matrix(const MatrixXd& m) {
  RealMatrix out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

inline AnalysisConfig parse_config(const json& j) {
  using namespace config_detail;
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  AnalysisConfig c;
  c.name = get_or<std::string>(j, "name", "", "config");

  const json& s = j.contains("system") ? j["system"] : throw ConfigError("config: missing 'system'");
  c.system.kind = get_or<std::string>(s, "kind", "dt", "system");
  if (c.system.kind != "dt" && c.system.kind != "ct-rk4") throw ConfigError("system.kind must be 'dt' or 'ct-rk4'");
  c.system.ts = get_or<double>(s, "ts", 0.0, "system");
  if (c.system.kind == "ct-rk4" && !(c.system.ts > 0.0)) throw ConfigError("system.ts must be positive for ct-rk4");
  c.system.states = get<std::vector<std::string>>(s, "states", "system");
  c.system.inputs = get<std::vector<std::string>>(s, "inputs", "system");
  c.system.f = get<std::vector<std::string>>(s, "f", "system");
  c.system.h = get<std::vector<std::string>>(s, "h", "system");

  const json& r = j.contains("region") ? j["region"] : throw ConfigError("config: missing 'region'");
  if (!r.contains("x") || !r.contains("w")) throw ConfigError("region: needs 'x' and 'w'");
  c.x_region = intervals(r["x"], "region.x");
  c.w_region = intervals(r["w"], "region.w");
  if (c.x_region.size() != c.system.states.size()) throw ConfigError("region.x: one interval per state required");
  if (c.w_region.size() != c.system.inputs.size()) throw ConfigError("region.w: one interval per input required");
  if (r.contains("input_rate")) c.input_rate = intervals(r["input_rate"], "region.input_rate");

  c.scheduling = get_or<std::vector<std::string>>(j, "scheduling", {}, "config");
  if (j.contains("grids")) {
    const json& g = j["grids"];
    c.grids.p_points = get_or<int>(g, "p", c.grids.p_points, "grids");
    c.grids.v_points = get_or<int>(g, "v", c.grids.v_points, "grids");
    c.grids.dset_points = get_or<int>(g, "dset", c.grids.dset_points, "grids");
    c.grids.quad_nodes = get_or<int>(g, "quad_nodes", c.grids.quad_nodes, "grids");
    c.grids.inflation = get_or<double>(g, "inflation", c.grids.inflation, "grids");
  }
  if (c.grids.p_points < 2 || c.grids.v_points < 1 || c.grids.dset_points < 2 || c.grids.quad_nodes < 2 ||
      c.grids.inflation < 1.0)
    throw ConfigError("grids: p >= 2, v >= 1, dset >= 2, quad_nodes >= 2, inflation >= 1 required");
  c.basis = get_or<std::vector<std::string>>(j, "storage_basis", {}, "config");

  const json& a = j.contains("analysis") ? j["analysis"] : throw ConfigError("config: missing 'analysis'");
  c.analysis.kind = get<std::string>(a, "kind", "analysis");
  bool known = false;
  for (const char* k : kAnalysisKinds) known = known || c.analysis.kind == k;
  if (!known) throw ConfigError("analysis.kind '" + c.analysis.kind + "' is not supported");
  c.analysis.alpha1 = get_or<double>(a, "alpha1", c.analysis.alpha1, "analysis");
  if (!(c.analysis.alpha1 > 0.0)) throw ConfigError("analysis.alpha1 must be positive");
  if (a.contains("Q")) c.analysis.Q = matrix(a["Q"], "analysis.Q");
  if (a.contains("S")) c.analysis.S = matrix(a["S"], "analysis.S");
  if (a.contains("R")) c.analysis.R = matrix(a["R"], "analysis.R");
  c.analysis.incremental = get_or<bool>(a, "incremental", true, "analysis");
  if (c.analysis.kind == "qsr-feasibility" && (c.analysis.Q.empty() || c.analysis.S.empty() || c.analysis.R.empty()))
    throw ConfigError("analysis: qsr-feasibility needs Q, S and R");
  c.analysis.w_star = get_or<std::vector<double>>(a, "w_star", {}, "analysis");
  if (a.contains("beta")) c.analysis.beta = get<double>(a, "beta", "analysis");
  c.analysis.level_set_samples = get_or<int>(a, "level_set_samples", 200, "analysis");
  if (a.contains("alpha")) {
    const json& al = a["alpha"];
    AlphaSpec sp;
    sp.B = matrix(get<json>(al, "B", "analysis.alpha"), "analysis.alpha.B");
    sp.C = matrix(get<json>(al, "C", "analysis.alpha"), "analysis.alpha.C");
    sp.points = get_or<int>(al, "points", 21, "analysis.alpha");
    if (al.contains("xstar")) sp.xstar = intervals(al["xstar"], "analysis.alpha.xstar");
    c.analysis.alpha = sp;
  }

  if (j.contains("scenarios")) {
    if (!j["scenarios"].is_array()) throw ConfigError("scenarios: expected an array");
    for (const auto& sc : j["scenarios"]) {
      ScenarioSpec sp;
      sp.name = get<std::string>(sc, "name", "scenario");
      sp.horizon = get<int>(sc, "horizon", "scenario " + sp.name);
      if (sp.horizon < 1) throw ConfigError("scenario " + sp.name + ": horizon must be >= 1");
      sp.run = trajectory(sc, "scenario " + sp.name);
      if (sc.contains("reference")) sp.reference = trajectory(sc["reference"], "scenario " + sp.name + ".reference");
      c.scenarios.push_back(std::move(sp));
    }
  }
  if (j.contains("output")) c.out_dir = get_or<std::string>(j["output"], "dir", c.out_dir, "output");
  return c;
}

inline json to_json(const AnalysisConfig& c) {
  using namespace config_detail;
  json j;
  j["name"] = c.name;
  j["system"] = {{"kind", c.system.kind}, {"ts", c.system.ts}, {"states", c.system.states},
                 {"inputs", c.system.inputs}, {"f", c.system.f}, {"h", c.system.h}};
  j["region"] = {{"x", intervals_json(c.x_region)}, {"w", intervals_json(c.w_region)}};
  if (c.input_rate) j["region"]["input_rate"] = intervals_json(*c.input_rate);
  j["scheduling"] = c.scheduling;
  j["grids"] = {{"p", c.grids.p_points}, {"v", c.grids.v_points}, {"dset", c.grids.dset_points},
                {"quad_nodes", c.grids.quad_nodes}, {"inflation", c.grids.inflation}};
  j["storage_basis"] = c.basis;
  json a = {{"kind", c.analysis.kind}, {"alpha1", c.analysis.alpha1}, {"incremental", c.analysis.incremental},
            {"level_set_samples", c.analysis.level_set_samples}};
  if (!c.analysis.Q.empty()) a["Q"] = c.analysis.Q;
  if (!c.analysis.S.empty()) a["S"] = c.analysis.S;
  if (!c.analysis.R.empty()) a["R"] = c.analysis.R;
  if (!c.analysis.w_star.empty()) a["w_star"] = c.analysis.w_star;
  if (c.analysis.beta) a["beta"] = *c.analysis.beta;
  if (c.analysis.alpha) {
    a["alpha"] = {{"B", c.analysis.alpha->B}, {"C", c.analysis.alpha->C}, {"points", c.analysis.alpha->points}};
    if (!c.analysis.alpha->xstar.empty()) a["alpha"]["xstar"] = intervals_json(c.analysis.alpha->xstar);
  }
  j["analysis"] = a;
  json sc = json::array();
  for (const auto& s : c.scenarios) {
    json e = trajectory_json(s.run);
    e["name"] = s.name;
    e["horizon"] = s.horizon;
    if (s.reference) e["reference"] = trajectory_json(*s.reference);
    sc.push_back(e);
  }
  j["scenarios"] = sc;
  j["output"] = {{"dir", c.out_dir}};
  return j;
}

inline AnalysisConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

/// The forced Duffing oscillator, RK4-discretized with ts = 0.01.
inline AnalysisConfig duffing_config() {
  AnalysisConfig c;
  c.name = "duffing";
  c.system = {"ct-rk4", 0.01, {"x1", "x2"}, {"w"}, {"x2", "-8*x1 - 10*x1^3 - 4*x2 + w"}, {"x1"}};
  c.x_region = {{-1.0, 1.0}, {-1.0, 1.0}};
  c.w_region = {{-1.0, 1.0}};
  c.basis = {"p1^2"};
  c.analysis.kind = "incremental-l2";
  ScenarioSpec s;
  s.name = "forced";
  s.horizon = 600;
  s.run = {{-0.08, 0.22}, {"0.7*exp(-t)*sin(2*t) + 0.3*sin(0.2*t)"}};
  s.reference = TrajectorySpec{{-0.50, -0.20}, {"0.3*exp(-t)*cos(t) + 0.3*sin(0.2*t)"}};
  c.scenarios.push_back(s);
  c.out_dir = "out/duffing";
  return c;
}

/// Builds the discrete-time system, parsing every expression.
inline DtSystem make_system(const SystemSpec& s) {
  VarSpace vs{s.states, s.inputs, static_cast<int>(s.h.size())};
  try {
    vs.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
  const VarList names = vs.names();
  std::vector<Expr> f, h;
  for (const auto& e : s.f) f.push_back(parse(e, names));
  for (const auto& e : s.h) h.push_back(parse(e, names));
  if (s.kind == "ct-rk4") return rk4_discretize(CtSystem{vs, f, h}, s.ts);
  return DtSystem(vs, f, h);
}

/// Samples an input signal given by expressions of t = k * ts and k.
inline std::vector<VectorXd> sample_inputs(const std::vector<std::string>& w, int n_w, double ts, int horizon) {
  if (static_cast<int>(w.size()) != n_w) throw ConfigError("scenario: one input expression per input required");
  const VarList tk{"t", "k"};
  std::vector<Expr> e;
  for (const auto& s : w) e.push_back(parse(s, tk));
  Tape tape(e);
  const double dt = ts > 0.0 ? ts : 1.0;
  std::vector<VectorXd> out;
  for (int k = 0; k < horizon; ++k) {
    VectorXd v(n_w);
    const double in[2] = {k * dt, static_cast<double>(k)};
    tape.eval(std::span<const double>(in, 2), std::span<double>(v.data(), static_cast<std::size_t>(n_w)));
    out.push_back(v);
  }
  return out;
}

}  // namespace eqfree

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "eqfree/pipeline.hpp"

namespace {

eqfree::AnalysisConfig load(const std::string& path) {
  if (path == "builtin:duffing") return eqfree::duffing_config();
  return eqfree::load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equilibrium-free stability and performance analysis of discrete-time nonlinear systems"};
  app.require_subcommand(1);
  std::string config, certificate;
  eqfree::CommandOptions opt;
  std::string out_dir;
  int grid = 0, v_grid = 0, quad = 0;
  double alpha1 = 0.0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("config", config, "JSON config file, or builtin:duffing")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--grid", grid, "scheduling grid points per dimension");
    sub->add_option("--v-grid", v_grid, "rate grid points per dimension");
    sub->add_option("--quad-nodes", quad, "Gauss-Legendre nodes for velocity forms");
    sub->add_option("--alpha1", alpha1, "lower bound on the storage matrix");
  };
  auto* analyze = app.add_subcommand("analyze", "solve the LMI analysis and write certificate.json");
  auto* dset = app.add_subcommand("dset", "estimate the state increment set");
  auto* verify = app.add_subcommand("verify", "check the incremental dissipation inequality on scenarios");
  auto* simulate = app.add_subcommand("simulate", "simulate the configured scenarios");
  for (auto* s : {analyze, dset, verify, simulate}) common(s);
  verify->add_option("--certificate", certificate, "certificate JSON (default: <out>/certificate.json)");

  app.footer(
      "Exit codes: 0 ok, 1 config error, 2 solver failure, 3 infeasible, 4 certificate/system hash mismatch,\n"
      "5 simulation diverged, 6 verification found a negative dissipation margin.\n"
      "EQFREE_THREADS caps the number of worker threads.");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : eqfree::kExitConfig;
  }

  if (!out_dir.empty()) opt.out_dir = out_dir;
  if (grid) opt.grid = grid;
  if (v_grid) opt.v_grid = v_grid;
  if (quad) opt.quad_nodes = quad;
  if (alpha1 != 0.0) opt.alpha1 = alpha1;

  eqfree::AnalysisConfig cfg;
  const int rc = eqfree::guarded(std::cerr, [&] {
    cfg = load(config);
    return 0;
  });
  if (rc != 0) return rc;

  if (*analyze) return eqfree::cmd_analyze(cfg, opt, std::cout, std::cerr);
  if (*dset) return eqfree::cmd_dset(cfg, opt, std::cout, std::cerr);
  if (*simulate) return eqfree::cmd_simulate(cfg, opt, std::cout, std::cerr);
  if (certificate.empty()) certificate = (std::filesystem::path(opt.out_dir.value_or(cfg.out_dir)) / "certificate.json").string();
  return eqfree::cmd_verify(cfg, certificate, opt, std::cout, std::cerr);
}

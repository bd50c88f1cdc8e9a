// mfgcharge: equilibrium solver and population simulator for price-coordinated
// fleet charging. Subcommands: solve, simulate, verify.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mfg/affine.hpp"
#include "mfg/config.hpp"
#include "mfg/csvio.hpp"
#include "mfg/equilibrium.hpp"
#include "mfg/errors.hpp"
#include "mfg/population.hpp"
#include "mfg/verify.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
  std::string solver_override;
};

mfg::RunConfig load_config(const CommonArgs& args) {
  mfg::RunConfig cfg;
  if (!args.config_path.empty()) cfg = mfg::read_config_file(args.config_path);
  for (const auto& o : args.overrides) mfg::apply_override(cfg, o);
  if (!args.solver_override.empty())
    mfg::apply_override(cfg, "solve.solver=" + args.solver_override);
  return cfg;
}

struct Solved {
  mfg::TimeGrid grid;
  mfg::SystemMatrices sys;
  mfg::CostParams cost;
  mfg::PriceFunction price_fn;
  mfg::EquilibriumSolution sol;
  std::optional<mfg::Traj<mfg::Mat2>> omega;
  mfg::Vec2 mean0;
};

// The affine solver commits the whole run to the affine price built from
// price.c1/c0 (solve and simulation); the iterative solvers use price.kind.
Solved run_solver(const mfg::RunConfig& cfg) {
  mfg::TimeGrid grid = cfg.make_grid();
  mfg::SystemMatrices sys = cfg.make_system(grid);
  mfg::CostParams cost = cfg.make_cost(grid);
  const mfg::Vec2 mean0(0.5 * (cfg.soc_lo + cfg.soc_hi), 0.0);
  if (cfg.solver == "affine") {
    mfg::PriceFunction pf = mfg::PriceFunction::affine(cfg.c1, cfg.c0);
    mfg::AffineEquilibrium aff =
        mfg::solve_affine(sys, cost, cfg.c1, cfg.c0, mean0, grid);
    mfg::EquilibriumSolution sol = aff.to_equilibrium();
    return Solved{grid,           std::move(sys),        std::move(cost),
                  std::move(pf),  std::move(sol),        std::move(aff.omega),
                  mean0};
  }
  if (cfg.solver == "fixedpoint") {
    mfg::PriceFunction pf = cfg.make_price();
    mfg::FixedPointOptions opt;
    opt.damping = cfg.damping;
    opt.max_iter = cfg.max_iter;
    if (cfg.tol > 0.0) opt.tol = cfg.tol;
    mfg::EquilibriumSolution sol =
        mfg::solve_fixed_point(sys, cost, pf, mean0, grid, opt);
    return Solved{grid,          std::move(sys), std::move(cost), std::move(pf),
                  std::move(sol), std::nullopt,   mean0};
  }
  if (cfg.solver == "variational") {
    mfg::PriceFunction pf = cfg.make_price();
    mfg::VariationalOptions opt;
    opt.max_iter = cfg.max_iter;
    if (cfg.tol > 0.0) opt.tol = cfg.tol;
    mfg::EquilibriumSolution sol =
        mfg::solve_variational(sys, cost, pf, mean0, grid, opt);
    return Solved{grid,          std::move(sys), std::move(cost), std::move(pf),
                  std::move(sol), std::nullopt,   mean0};
  }
  throw mfg::ConfigError(
      "solve.solver must be one of affine|fixedpoint|variational (got '" +
      cfg.solver + "')");
}

std::string out_path(const CommonArgs& args, const char* name) {
  std::filesystem::create_directories(args.out_dir);
  return (std::filesystem::path(args.out_dir) / name).string();
}

void write_json(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mfg::DataError("cannot open output file: " + path);
  out << j.dump(2) << "\n";
  if (!out.good()) throw mfg::DataError("write failed: " + path);
}

nlohmann::ordered_json solve_report(const mfg::RunConfig& cfg, const Solved& s,
                                    const mfg::TpbvpResidual& res) {
  nlohmann::ordered_json j;
  j["solver"] = cfg.solver;
  j["price_kind"] = cfg.solver == "affine" ? "affine" : cfg.price_kind;
  j["grid"] = {{"horizon_hours", cfg.horizon},
               {"dt_hours", cfg.dt},
               {"nodes", s.grid.steps() + 1}};
  j["iterations"] = s.sol.diag.iterations;
  j["residual"] = s.sol.diag.residual;
  j["gradient_norm"] = s.sol.diag.gradient_norm;
  j["wall_seconds"] = s.sol.diag.wall_seconds;
  j["tpbvp_residual"] = {{"backward", res.backward},
                         {"forward", res.forward},
                         {"terminal", res.terminal}};
  return j;
}

void print_solve_summary(const mfg::RunConfig& cfg, const Solved& s,
                         const mfg::TpbvpResidual& res) {
  std::cout << "solver " << s.sol.diag.method << ", price "
            << (cfg.solver == "affine" ? "affine" : cfg.price_kind) << ", "
            << s.grid.steps() + 1 << " nodes (T = " << mfg::format_double(cfg.horizon)
            << " h, dt = " << mfg::format_double(cfg.dt) << " h)\n";
  std::cout << "iterations " << s.sol.diag.iterations << ", residual "
            << s.sol.diag.residual << ", gradient norm " << s.sol.diag.gradient_norm
            << ", wall " << s.sol.diag.wall_seconds << " s\n";
  std::cout << "tpbvp residual: backward " << res.backward << ", forward "
            << res.forward << ", terminal " << res.terminal << "\n";
}

int cmd_solve(const CommonArgs& args) {
  const mfg::RunConfig cfg = load_config(args);
  const Solved s = run_solver(cfg);
  const mfg::TpbvpResidual res =
      mfg::tpbvp_residual(s.sol, s.sys, s.cost, s.price_fn, s.mean0, s.grid);
  print_solve_summary(cfg, s, res);
  const std::string csv = out_path(args, "equilibrium.csv");
  mfg::write_equilibrium_csv(csv, s.sol, s.omega ? &*s.omega : nullptr);
  nlohmann::ordered_json j = solve_report(cfg, s, res);
  j["command"] = "solve";
  write_json(out_path(args, "diagnostics.json"), j);
  std::cout << "wrote " << csv << " (" << s.grid.steps() + 1 << " data rows), "
            << out_path(args, "diagnostics.json") << "\n";
  return 0;
}

int cmd_simulate(const CommonArgs& args, bool agents_csv) {
  const mfg::RunConfig cfg = load_config(args);
  const Solved s = run_solver(cfg);
  const mfg::TpbvpResidual res =
      mfg::tpbvp_residual(s.sol, s.sys, s.cost, s.price_fn, s.mean0, s.grid);
  print_solve_summary(cfg, s, res);

  mfg::SimOptions so;
  so.n_agents = cfg.n_agents;
  so.seed = cfg.seed;
  so.soc_lo = cfg.soc_lo;
  so.soc_hi = cfg.soc_hi;
  if (agents_csv) so.store_agents = true;
  const mfg::FeedbackStrategy strat = mfg::equilibrium_strategy(s.sol, s.cost.r);
  const mfg::SimResult sim =
      mfg::simulate_population(strat, s.sys, s.cost, s.price_fn, s.grid, so);

  std::optional<mfg::SimResult> base;
  if (cfg.baseline) {
    mfg::SimOptions bo = so;
    bo.store_agents = false;
    const mfg::FeedbackStrategy blind =
        mfg::uncoordinated_strategy(s.sys, s.cost, s.grid);
    base = mfg::simulate_population(blind, s.sys, s.cost, s.price_fn, s.grid, bo);
  }

  const int m = s.grid.steps();
  const double gap = mfg::consistency_error(sim, s.sol.mean);
  double plat_min = 1e300, plat_max = -1e300, plat_sum = 0.0;
  int plat_n = 0;
  for (int k = m / 4; k <= 3 * m / 4; ++k) {
    const double v = sim.mean_emp[k](1);
    plat_min = std::min(plat_min, v);
    plat_max = std::max(plat_max, v);
    plat_sum += v;
    ++plat_n;
  }
  const double plateau = (plat_max - plat_min) / (plat_sum / plat_n);
  std::cout << "simulated " << sim.n_agents << " agents, seed " << sim.seed << "\n";
  std::cout << "consistency gap sup|xbar2_emp - xbar2|: " << gap << " kW\n";
  std::cout << "mean power plateau statistic over the middle half: " << plateau
            << "\n";
  std::cout << "mean terminal SOC: " << sim.mean_emp[m](0) << " kWh\n";
  std::cout << "average realized cost: " << sim.avg_cost << "\n";

  const std::string pop_csv = out_path(args, "population.csv");
  mfg::write_population_csv(pop_csv, sim, s.sol.mean, s.sol.price,
                            base ? &base->mean_emp : nullptr);
  const std::string eq_csv = out_path(args, "equilibrium.csv");
  mfg::write_equilibrium_csv(eq_csv, s.sol, s.omega ? &*s.omega : nullptr);
  std::cout << "wrote " << pop_csv << ", " << eq_csv;
  if (agents_csv) {
    const std::string acsv = out_path(args, "agents.csv");
    mfg::write_agents_csv(acsv, sim);
    std::cout << ", " << acsv << " (" << sim.n_agents << "x" << m + 1 << " rows)";
  }

  nlohmann::ordered_json j = solve_report(cfg, s, res);
  j["command"] = "simulate";
  j["n_agents"] = sim.n_agents;
  j["seed"] = sim.seed;
  j["consistency_gap_kw"] = gap;
  j["plateau_statistic"] = plateau;
  j["terminal_soc_mean_kwh"] = sim.mean_emp[m](0);
  j["average_realized_cost"] = sim.avg_cost;
  j["baseline"] = cfg.baseline;
  write_json(out_path(args, "diagnostics.json"), j);
  std::cout << ", " << out_path(args, "diagnostics.json") << "\n";
  return 0;
}

int cmd_verify(const CommonArgs& args, bool quick, double perturb_s) {
  const mfg::RunConfig cfg = load_config(args);
  mfg::VerifyOptions opt;
  opt.quick = quick;
  opt.perturb_s = perturb_s;
  const auto results = mfg::run_verification(cfg, opt, std::cout);
  int failed = 0;
  for (const auto& r : results)
    if (!r.passed) ++failed;
  std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "price-coordinated fleet charging: equilibrium solver and population "
      "simulator"};
  app.require_subcommand(1);

  CommonArgs args;
  bool agents_csv = false;
  bool quick = false;
  double perturb_s = 0.0;

  const auto add_common = [&](CLI::App* cmd, bool with_solver) {
    cmd->add_option("-c,--config", args.config_path,
                    "Config file (key=value sections); defaults reproduce the "
                    "reference scenario");
    cmd->add_option("--set", args.overrides,
                    "Override one key, e.g. --set cost.r=0.2 (repeatable)");
    cmd->add_option("-o,--out", args.out_dir, "Output directory");
    if (with_solver)
      cmd->add_option("--solver", args.solver_override,
                      "affine | fixedpoint | variational (overrides solve.solver)");
  };

  CLI::App* solve =
      app.add_subcommand("solve", "Solve the equilibrium; write equilibrium.csv "
                                  "and diagnostics.json");
  add_common(solve, true);

  CLI::App* simulate = app.add_subcommand(
      "simulate", "Solve, then simulate the finite population; write "
                  "population.csv (and optional agents.csv)");
  add_common(simulate, true);
  simulate->add_flag("--agents-csv", agents_csv,
                     "Also write per-agent trajectories to agents.csv");

  CLI::App* verify = app.add_subcommand(
      "verify", "Run the self-verification suite against the configured scenario");
  add_common(verify, false);
  verify->add_flag("--quick", quick, "Skip the Monte Carlo population checks");
  verify->add_option("--perturb-s", perturb_s,
                     "Fault injection: shift the offset s2 before residual checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (solve->parsed()) return cmd_solve(args);
    if (simulate->parsed()) return cmd_simulate(args, agents_csv);
    return cmd_verify(args, quick, perturb_s);
  } catch (const mfg::ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mfg::IntegrationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mfg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const mfg::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 1;
  } catch (const mfg::GridMismatchError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

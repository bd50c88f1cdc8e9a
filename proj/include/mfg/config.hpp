#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mfg/grid.hpp"
#include "mfg/model.hpp"

namespace mfg {

// ============================================================================
// Run configuration: human-readable key=value sections.
//
//   [grid]   T, dt
//   [model]  kappa, sigma1, sigma2, e_cap, b_table
//   [cost]   q, r, q_terminal, x_ref, x_ref_terminal, g_ref
//   [price]  kind (affine|sigmoid|table), c1, c0, d_max, a, table
//   [solve]  solver (affine|fixedpoint|variational), tol, max_iter, damping
//   [sim]    N, seed, soc_lo, soc_hi, baseline
//
// Symmetric 2x2 matrices take two numbers (diagonal), three (upper triangle,
// row-major) or four (full, must be symmetric). Vectors take exactly two
// numbers. Number lists split on spaces and/or commas. Full-line comments
// start with '#'. Unknown sections or keys are rejected by name; overrides
// ("section.key=value") run through the same setters and apply before any
// semantic validation. The shipped defaults reproduce the reference
// overnight-charging scenario.
// ============================================================================

struct RunConfig {
  // [grid]
  double horizon = 8.0;  // T, hours
  double dt = 0.005;     // step, hours
  // [model]
  double kappa = 0.9;
  double sigma1 = 0.5;
  double sigma2 = 0.25;
  double e_cap = 60.0;
  std::string b_table;  // optional drain table path, two-column CSV (t, b)
  // [cost]
  Mat2 q = Vec2(0.5, 2.5).asDiagonal();
  double r = 0.10;
  Mat2 q_terminal = Vec2(60.0, 1.0).asDiagonal();
  Vec2 x_ref = Vec2(54.0, 9.6);
  Vec2 x_ref_terminal = Vec2(54.0, 0.0);
  double g_ref = 5.0;
  // [price]
  std::string price_kind = "sigmoid";
  double c1 = 4.0;
  double c0 = 20.0;
  double d_max = 20.0;
  double a = 1.5;
  std::string price_table;  // two-column CSV (d, alpha) when kind = table
  // [solve]
  std::string solver = "variational";
  double tol = -1.0;  // < 0: use the solver's own default
  int max_iter = 500;
  double damping = 0.5;
  // [sim]
  int n_agents = 200;
  std::uint64_t seed = 1;
  double soc_lo = 18.0;
  double soc_hi = 30.0;
  bool baseline = true;

  TimeGrid make_grid() const;
  SystemMatrices make_system(const TimeGrid& grid) const;
  CostParams make_cost(const TimeGrid& grid) const;
  PriceFunction make_price() const;  // the function named by price.kind
};

RunConfig parse_config_text(const std::string& text);
RunConfig read_config_file(const std::string& path);

// One "section.key=value" override on top of an existing config.
void apply_override(RunConfig& cfg, const std::string& spec);

// Canonical form; parse_config_text(serialize_config(cfg)) reproduces cfg
// bit-exactly (doubles print shortest round-trip).
std::string serialize_config(const RunConfig& cfg);

// Two-column CSV loaders. Blank lines and '#' comments are skipped; a single
// leading non-numeric header row is tolerated. The drain table is sampled
// per grid node (linear between rows, constant beyond the ends).
std::vector<double> load_drain_table(const std::string& path, const TimeGrid& grid);
std::vector<std::pair<double, double>> load_price_table(const std::string& path);

}  // namespace mfg

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mfg/equilibrium.hpp"

namespace mfg {

// ============================================================================
// Finite-population simulation.
//
// N agents run the decentralized feedback u = -(1/R)(P(t) z + s(t))_2 under
// Euler-Maruyama with independent noise. The realized price is read off the
// empirical power mean, alpha(mean_N(z2) - r_g), and each agent's realized
// cost is accrued by trapezoidal quadrature along its own path.
//
// Reproducibility contract: for a fixed (seed, n_agents) the simulation is
// bitwise deterministic, independent of thread count. Noise is counter-based
// (agent index and step index address the stream directly, nothing is shared
// or advanced), and cross-agent reductions sum fixed agent blocks in block
// order. The MFG_CHARGE_THREADS environment variable caps the worker count.
// ============================================================================

struct FeedbackStrategy {
  RiccatiSolution riccati;
  AdjointOffset offset;
  double r = 0.1;
};

// The equilibrium feedback of a solved mean field problem.
FeedbackStrategy equilibrium_strategy(const EquilibriumSolution& sol, double r);

// Price-blind baseline: same Riccati backbone, offset solved with p == 0.
// Under the same SimOptions seed the noise is paired draw-for-draw with the
// coordinated run.
FeedbackStrategy uncoordinated_strategy(const SystemMatrices& sys,
                                        const CostParams& cost,
                                        const TimeGrid& grid);

struct SimOptions {
  int n_agents = 200;
  std::uint64_t seed = 1;
  double soc_lo = 18.0;  // initial SOC uniform on [soc_lo, soc_hi], power 0
  double soc_hi = 30.0;
  // Retain per-agent trajectories; defaults to n_agents <= 1000.
  std::optional<bool> store_agents;
  int threads = 0;  // 0: hardware default, capped by MFG_CHARGE_THREADS
  // Accrue realized costs against this fixed price path instead of the
  // empirical one (used when comparing against the theoretical value).
  std::optional<Traj<double>> cost_price;
};

struct SimResult {
  TimeGrid grid;
  Traj<Vec2> mean_emp;    // empirical mean state per node
  Traj<double> price_emp; // alpha(empirical power mean - r_g) per node
  // Cross-sectional quantiles per node (type-7 linear interpolation).
  std::vector<double> soc_q05, soc_q50, soc_q95;
  std::vector<double> pow_q05, pow_q50, pow_q95;
  double avg_cost = 0.0;            // population mean realized cost
  std::vector<double> agent_costs;  // realized cost per agent
  // Retained trajectories, agent-major: value(i, k) = data[i * nodes + k].
  bool stored = false;
  std::vector<double> soc;
  std::vector<double> power;
  std::vector<double> ramp;
  int n_agents = 0;
  std::uint64_t seed = 0;
};

SimResult simulate_population(const FeedbackStrategy& strat,
                              const SystemMatrices& sys, const CostParams& cost,
                              const PriceFunction& price_fn, const TimeGrid& grid,
                              const SimOptions& opt);

// Sup over nodes of |empirical power mean - theoretical power mean|.
double consistency_error(const SimResult& sim, const Traj<Vec2>& mean_theory);

// Recompute one retained agent's realized cost against an explicit price
// path; throws DataError unless trajectories were stored.
double realized_cost(const SimResult& sim, int agent, const CostParams& cost,
                     const Traj<double>& price_path);

}  // namespace mfg

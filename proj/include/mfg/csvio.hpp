#pragma once

#include <string>

#include "mfg/equilibrium.hpp"
#include "mfg/population.hpp"

namespace mfg {

// Shortest round-trip decimal form, '.' decimal point, locale-independent.
std::string format_double(double v);

// equilibrium.csv: t, xbar1_kwh, xbar2_kw, price, s1, s2, P11, P12, P22,
// Omega11, Omega12, Omega22. The Omega cells stay empty when omega is null.
void write_equilibrium_csv(const std::string& path, const EquilibriumSolution& sol,
                           const Traj<Mat2>* omega);

// population.csv: t, xbar2_emp_kw, xbar2_theory_kw, price_emp, price_theory,
// soc_q05, soc_q50, soc_q95, pow_q05, pow_q50, pow_q95, baseline_xbar2_kw.
// The baseline cells stay empty when baseline_mean is null.
void write_population_csv(const std::string& path, const SimResult& sim,
                          const Traj<Vec2>& mean_theory,
                          const Traj<double>& price_theory,
                          const Traj<Vec2>* baseline_mean);

// agents.csv, long format, agent-major: t, agent_id, soc_kwh, power_kw,
// ramp_kw_per_h. Requires retained per-agent trajectories.
void write_agents_csv(const std::string& path, const SimResult& sim);

}  // namespace mfg

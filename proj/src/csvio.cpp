#include "mfg/csvio.hpp"

#include <array>
#include <charconv>
#include <fstream>

#include "mfg/errors.hpp"

namespace mfg {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open output file: " + path);
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out.good()) throw DataError("write failed: " + path);
}

}  // namespace

std::string format_double(double v) {
  std::array<char, 32> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

void write_equilibrium_csv(const std::string& path, const EquilibriumSolution& sol,
                           const Traj<Mat2>* omega) {
  auto out = open_out(path);
  out << "t,xbar1_kwh,xbar2_kw,price,s1,s2,P11,P12,P22,Omega11,Omega12,Omega22\n";
  const TimeGrid& grid = sol.mean.grid();
  for (int k = 0; k <= grid.steps(); ++k) {
    const Vec2& m = sol.mean[k];
    const Vec2& s = sol.offset.s[k];
    const Mat2& p = sol.riccati.p[k];
    out << format_double(grid.time(k)) << ',' << format_double(m(0)) << ','
        << format_double(m(1)) << ',' << format_double(sol.price[k]) << ','
        << format_double(s(0)) << ',' << format_double(s(1)) << ','
        << format_double(p(0, 0)) << ',' << format_double(p(0, 1)) << ','
        << format_double(p(1, 1)) << ',';
    if (omega != nullptr) {
      const Mat2& w = (*omega)[k];
      out << format_double(w(0, 0)) << ',' << format_double(w(0, 1)) << ','
          << format_double(w(1, 1));
    } else {
      out << ",,";
    }
    out << '\n';
  }
  finish(out, path);
}

void write_population_csv(const std::string& path, const SimResult& sim,
                          const Traj<Vec2>& mean_theory,
                          const Traj<double>& price_theory,
                          const Traj<Vec2>* baseline_mean) {
  require_same_grid(sim.grid, mean_theory.grid(), "population csv");
  auto out = open_out(path);
  out << "t,xbar2_emp_kw,xbar2_theory_kw,price_emp,price_theory,"
         "soc_q05,soc_q50,soc_q95,pow_q05,pow_q50,pow_q95,baseline_xbar2_kw\n";
  for (int k = 0; k <= sim.grid.steps(); ++k) {
    out << format_double(sim.grid.time(k)) << ','
        << format_double(sim.mean_emp[k](1)) << ','
        << format_double(mean_theory[k](1)) << ','
        << format_double(sim.price_emp[k]) << ','
        << format_double(price_theory[k]) << ','
        << format_double(sim.soc_q05[k]) << ',' << format_double(sim.soc_q50[k])
        << ',' << format_double(sim.soc_q95[k]) << ','
        << format_double(sim.pow_q05[k]) << ',' << format_double(sim.pow_q50[k])
        << ',' << format_double(sim.pow_q95[k]) << ',';
    if (baseline_mean != nullptr) out << format_double((*baseline_mean)[k](1));
    out << '\n';
  }
  finish(out, path);
}

void write_agents_csv(const std::string& path, const SimResult& sim) {
  if (!sim.stored)
    throw DataError("agents csv requires retained per-agent trajectories");
  auto out = open_out(path);
  out << "t,agent_id,soc_kwh,power_kw,ramp_kw_per_h\n";
  const int nodes = sim.grid.steps() + 1;
  for (int i = 0; i < sim.n_agents; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * nodes;
    for (int k = 0; k < nodes; ++k) {
      out << format_double(sim.grid.time(k)) << ',' << i << ','
          << format_double(sim.soc[base + k]) << ','
          << format_double(sim.power[base + k]) << ','
          << format_double(sim.ramp[base + k]) << '\n';
    }
  }
  finish(out, path);
}

}  // namespace mfg

#include "mfg/population.hpp"

#include <algorithm>
#include <atomic>
#include <barrier>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <utility>

namespace mfg {

namespace {

// Agents are grouped into fixed-size blocks; reductions sum per-block partial
// results in block index order, which makes them independent of how blocks
// are assigned to threads.
constexpr int kAgentBlock = 256;

constexpr std::uint64_t kPurposeInit = 0x1u;
constexpr std::uint64_t kPurposeNoise = 0x2u;
constexpr double kTwoPi = 6.283185307179586476925286766559;

// SplitMix64 finalizer, used as a keyed bijective mixer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based stream: every draw is addressed, nothing is advanced.
struct CounterRng {
  std::uint64_t key;

  double uniform(std::uint64_t counter) const {
    std::uint64_t z = mix64(key ^ mix64(counter));
    return (static_cast<double>(z >> 11) + 0.5) * 0x1.0p-53;  // strictly in (0,1)
  }

  // Standard normal pair (Box-Muller) at counters (2k, 2k+1).
  void normal_pair(std::uint64_t k, double& n1, double& n2) const {
    double u1 = uniform(2 * k);
    double u2 = uniform(2 * k + 1);
    double rad = std::sqrt(-2.0 * std::log(u1));
    double ang = kTwoPi * u2;
    n1 = rad * std::cos(ang);
    n2 = rad * std::sin(ang);
  }
};

CounterRng agent_stream(std::uint64_t seed, std::uint64_t agent,
                        std::uint64_t purpose) {
  return CounterRng{mix64(seed ^ mix64(agent ^ mix64(purpose)))};
}

int env_thread_cap() {
  const char* env = std::getenv("MFG_CHARGE_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (end == env || v < 1) return 0;
  return static_cast<int>(std::min(v, 256L));
}

// Type-7 quantile of the first n entries of scratch (partially reorders it).
double quantile_type7(std::vector<double>& scratch, int n, double q) {
  double h = q * (n - 1);
  int lo = static_cast<int>(h);
  double frac = h - lo;
  std::nth_element(scratch.begin(), scratch.begin() + lo, scratch.begin() + n);
  double v = scratch[lo];
  if (frac > 0.0 && lo + 1 < n) {
    double next = *std::min_element(scratch.begin() + lo + 1, scratch.begin() + n);
    v += frac * (next - v);
  }
  return v;
}

}  // namespace

FeedbackStrategy equilibrium_strategy(const EquilibriumSolution& sol, double r) {
  return FeedbackStrategy{sol.riccati, sol.offset, r};
}

FeedbackStrategy uncoordinated_strategy(const SystemMatrices& sys,
                                        const CostParams& cost,
                                        const TimeGrid& grid) {
  FeedbackStrategy strat;
  strat.riccati = integrate_riccati(sys, cost.q, cost.r, cost.q_terminal, grid);
  strat.offset = integrate_offset(strat.riccati, sys, cost, ScalarSignal(0.0), grid);
  strat.r = cost.r;
  return strat;
}

SimResult simulate_population(const FeedbackStrategy& strat,
                              const SystemMatrices& sys, const CostParams& cost,
                              const PriceFunction& price_fn, const TimeGrid& grid,
                              const SimOptions& opt) {
  if (opt.n_agents < 1) throw ConfigError("sim.agents must be >= 1");
  if (!(std::isfinite(opt.soc_lo) && std::isfinite(opt.soc_hi) &&
        opt.soc_lo <= opt.soc_hi)) {
    throw ConfigError("sim initial SOC range must be finite with soc_lo <= soc_hi");
  }
  require_same_grid(strat.riccati.p.grid(), grid, "simulate_population");
  require_same_grid(strat.offset.s.grid(), grid, "simulate_population");
  if (opt.cost_price) {
    require_same_grid(opt.cost_price->grid(), grid, "simulate_population cost price");
  }
  cost.validate(grid);

  const int n_agents = opt.n_agents;
  const int nodes = grid.nodes();
  const int steps = grid.steps();
  const double dt = grid.dt();
  const bool store = opt.store_agents.value_or(n_agents <= 1000);

  // Per-node scalar coefficients so the agent loop touches plain arrays only.
  std::vector<double> gain1(nodes), gain2(nodes), gain0(nodes);
  std::vector<double> rx1(nodes), rx2(nodes), fdrift(nodes), gref(nodes), w(nodes);
  for (int k = 0; k < nodes; ++k) {
    const Mat2& p = strat.riccati.p[k];
    const Vec2& s = strat.offset.s[k];
    gain1[k] = p(1, 0) / strat.r;
    gain2[k] = p(1, 1) / strat.r;
    gain0[k] = s(1) / strat.r;
    rx1[k] = cost.x_ref[k](0);
    rx2[k] = cost.x_ref[k](1);
    fdrift[k] = sys.f(grid.time(k))(0);
    gref[k] = cost.g_ref[k];
    w[k] = trapezoid_weight(grid, k);
  }
  const double kappa = sys.a(0, 1);
  const double sn1 = sys.sigma(0, 0) * std::sqrt(dt);
  const double sn2 = sys.sigma(1, 1) * std::sqrt(dt);
  const double q00 = cost.q(0, 0), q01 = cost.q(0, 1), q11 = cost.q(1, 1);
  const double qt00 = cost.q_terminal(0, 0), qt01 = cost.q_terminal(0, 1),
               qt11 = cost.q_terminal(1, 1);
  const std::vector<double>* fixed_price =
      opt.cost_price ? &opt.cost_price->node_values() : nullptr;

  SimResult res;
  res.grid = grid;
  res.n_agents = n_agents;
  res.seed = opt.seed;
  res.stored = store;
  res.agent_costs.assign(n_agents, 0.0);
  res.soc_q05.resize(nodes);
  res.soc_q50.resize(nodes);
  res.soc_q95.resize(nodes);
  res.pow_q05.resize(nodes);
  res.pow_q50.resize(nodes);
  res.pow_q95.resize(nodes);
  if (store) {
    res.soc.resize(static_cast<std::size_t>(n_agents) * nodes);
    res.power.resize(static_cast<std::size_t>(n_agents) * nodes);
    res.ramp.resize(static_cast<std::size_t>(n_agents) * nodes);
  }

  const int n_blocks = (n_agents + kAgentBlock - 1) / kAgentBlock;
  int threads = opt.threads;
  if (threads <= 0) threads = env_thread_cap();
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, n_blocks);

  // Shared cross-sections and reduction slots.
  std::vector<std::uint64_t> noise_key(n_agents);
  for (int i = 0; i < n_agents; ++i) {
    noise_key[i] =
        agent_stream(opt.seed, static_cast<std::uint64_t>(i), kPurposeNoise).key;
  }
  std::vector<double> cur_soc(n_agents), cur_pow(n_agents);
  std::vector<Vec2> block_sum(n_blocks, Vec2::Zero());
  std::vector<double> block_cost(n_blocks, 0.0);
  std::vector<Vec2> mean_nodes(nodes, Vec2::Zero());
  std::vector<double> price_nodes_arr(nodes, 0.0);
  std::vector<double> scratch(n_agents);
  std::atomic<bool> failed{false};
  double avg_cost = 0.0;

  int reduce_node = 0;
  auto completion = [&]() noexcept {
    if (reduce_node < nodes) {
      Vec2 total = Vec2::Zero();
      for (int b = 0; b < n_blocks; ++b) total += block_sum[b];
      Vec2 m = total / static_cast<double>(n_agents);
      mean_nodes[reduce_node] = m;
      double dev = m(1) - gref[reduce_node];
      if (std::isfinite(dev)) {
        price_nodes_arr[reduce_node] = price_fn(dev);
      } else {
        failed.store(true, std::memory_order_relaxed);
      }
      std::copy(cur_soc.begin(), cur_soc.end(), scratch.begin());
      res.soc_q05[reduce_node] = quantile_type7(scratch, n_agents, 0.05);
      res.soc_q50[reduce_node] = quantile_type7(scratch, n_agents, 0.50);
      res.soc_q95[reduce_node] = quantile_type7(scratch, n_agents, 0.95);
      std::copy(cur_pow.begin(), cur_pow.end(), scratch.begin());
      res.pow_q05[reduce_node] = quantile_type7(scratch, n_agents, 0.05);
      res.pow_q50[reduce_node] = quantile_type7(scratch, n_agents, 0.50);
      res.pow_q95[reduce_node] = quantile_type7(scratch, n_agents, 0.95);
      ++reduce_node;
    } else {
      double total = 0.0;
      for (int b = 0; b < n_blocks; ++b) total += block_cost[b];
      avg_cost = total / static_cast<double>(n_agents);
    }
  };
  std::barrier bar(threads, completion);

  auto running_cost = [&](int k, double z1, double z2, double u, double p) {
    double d1 = z1 - rx1[k];
    double d2 = z2 - rx2[k];
    return 0.5 * (q00 * d1 * d1 + 2.0 * q01 * d1 * d2 + q11 * d2 * d2) + p * z2 +
           0.5 * cost.r * u * u;
  };

  auto worker = [&](int tid) {
    const int blk_lo = static_cast<int>(static_cast<long>(tid) * n_blocks / threads);
    const int blk_hi =
        static_cast<int>(static_cast<long>(tid + 1) * n_blocks / threads);

    for (int b = blk_lo; b < blk_hi; ++b) {
      const int lo = b * kAgentBlock;
      const int hi = std::min(lo + kAgentBlock, n_agents);
      Vec2 bsum = Vec2::Zero();
      for (int i = lo; i < hi; ++i) {
        CounterRng init = agent_stream(opt.seed, static_cast<std::uint64_t>(i),
                                       kPurposeInit);
        double z1 = opt.soc_lo + (opt.soc_hi - opt.soc_lo) * init.uniform(0);
        cur_soc[i] = z1;
        cur_pow[i] = 0.0;
        if (store) {
          res.soc[static_cast<std::size_t>(i) * nodes] = z1;
          res.power[static_cast<std::size_t>(i) * nodes] = 0.0;
        }
        bsum += Vec2(z1, 0.0);
      }
      block_sum[b] = bsum;
    }
    bar.arrive_and_wait();  // node 0 reduced

    for (int k = 0; k < steps; ++k) {
      for (int b = blk_lo; b < blk_hi; ++b) {
        const int lo = b * kAgentBlock;
        const int hi = std::min(lo + kAgentBlock, n_agents);
        const double pk = fixed_price ? (*fixed_price)[k] : price_nodes_arr[k];
        Vec2 bsum = Vec2::Zero();
        for (int i = lo; i < hi; ++i) {
          double z1 = cur_soc[i];
          double z2 = cur_pow[i];
          double u = -(gain1[k] * z1 + gain2[k] * z2 + gain0[k]);
          res.agent_costs[i] += w[k] * running_cost(k, z1, z2, u, pk);
          if (store) res.ramp[static_cast<std::size_t>(i) * nodes + k] = u;
          CounterRng noise{noise_key[i]};
          double n1, n2;
          noise.normal_pair(static_cast<std::uint64_t>(k), n1, n2);
          z1 += (kappa * z2 + fdrift[k]) * dt + sn1 * n1;
          z2 += u * dt + sn2 * n2;
          if (!(std::isfinite(z1) && std::isfinite(z2)) ||
              std::abs(z1) > 1e12 || std::abs(z2) > 1e12) {
            failed.store(true, std::memory_order_relaxed);
            z1 = 0.0;
            z2 = 0.0;
          }
          cur_soc[i] = z1;
          cur_pow[i] = z2;
          if (store) {
            res.soc[static_cast<std::size_t>(i) * nodes + k + 1] = z1;
            res.power[static_cast<std::size_t>(i) * nodes + k + 1] = z2;
          }
          bsum += Vec2(z1, z2);
        }
        block_sum[b] = bsum;
      }
      bar.arrive_and_wait();  // node k + 1 reduced
    }

    // Terminal node: last running sample plus the terminal penalty.
    for (int b = blk_lo; b < blk_hi; ++b) {
      const int lo = b * kAgentBlock;
      const int hi = std::min(lo + kAgentBlock, n_agents);
      const double pm = fixed_price ? (*fixed_price)[steps] : price_nodes_arr[steps];
      double csum = 0.0;
      for (int i = lo; i < hi; ++i) {
        double z1 = cur_soc[i];
        double z2 = cur_pow[i];
        double u = -(gain1[steps] * z1 + gain2[steps] * z2 + gain0[steps]);
        res.agent_costs[i] += w[steps] * running_cost(steps, z1, z2, u, pm);
        if (store) res.ramp[static_cast<std::size_t>(i) * nodes + steps] = u;
        double d1 = z1 - cost.x_ref_terminal(0);
        double d2 = z2 - cost.x_ref_terminal(1);
        res.agent_costs[i] +=
            0.5 * (qt00 * d1 * d1 + 2.0 * qt01 * d1 * d2 + qt11 * d2 * d2);
        csum += res.agent_costs[i];
      }
      block_cost[b] = csum;
    }
    bar.arrive_and_wait();  // average cost reduced
  };

  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }

  if (failed.load()) {
    throw IntegrationError(
        "population simulation diverged (non-finite agent state or price input)");
  }

  res.mean_emp = Traj<Vec2>(grid, std::move(mean_nodes));
  res.price_emp = Traj<double>(grid, std::move(price_nodes_arr));
  res.avg_cost = avg_cost;
  return res;
}

double consistency_error(const SimResult& sim, const Traj<Vec2>& mean_theory) {
  require_same_grid(sim.grid, mean_theory.grid(), "consistency_error");
  double sup = 0.0;
  for (int k = 0; k < sim.grid.nodes(); ++k) {
    sup = std::max(sup, std::abs(sim.mean_emp[k](1) - mean_theory[k](1)));
  }
  return sup;
}

double realized_cost(const SimResult& sim, int agent, const CostParams& cost,
                     const Traj<double>& price_path) {
  if (!sim.stored) {
    throw DataError("realized_cost needs retained agent trajectories");
  }
  if (agent < 0 || agent >= sim.n_agents) {
    throw DataError("realized_cost: agent index out of range");
  }
  require_same_grid(sim.grid, price_path.grid(), "realized_cost");
  const int nodes = sim.grid.nodes();
  const std::size_t base = static_cast<std::size_t>(agent) * nodes;
  std::vector<double> run(nodes);
  for (int k = 0; k < nodes; ++k) {
    Vec2 z(sim.soc[base + k], sim.power[base + k]);
    Vec2 d = z - cost.x_ref[k];
    double u = sim.ramp[base + k];
    run[k] = 0.5 * d.dot(cost.q * d) + price_path[k] * z(1) + 0.5 * cost.r * u * u;
  }
  Vec2 zt(sim.soc[base + nodes - 1], sim.power[base + nodes - 1]);
  Vec2 dt = zt - cost.x_ref_terminal;
  return trapezoid(sim.grid, run) + 0.5 * dt.dot(cost.q_terminal * dt);
}

}  // namespace mfg

#include "mfg/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include <Eigen/Eigenvalues>

#include "mfg/affine.hpp"
#include "mfg/csvio.hpp"
#include "mfg/equilibrium.hpp"
#include "mfg/errors.hpp"
#include "mfg/lqsolve.hpp"
#include "mfg/population.hpp"

namespace mfg {

namespace {

constexpr std::uint64_t kCheckSeed = 0x76657269667921ull;
constexpr double kPi = 3.14159265358979323846;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

class Runner {
 public:
  explicit Runner(std::ostream& out) : out_(out) {}

  template <class Fn>
  void run(const std::string& name, Fn&& fn) {
    CheckResult r;
    r.name = name;
    try {
      fn(r);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    out_ << (r.passed ? "[PASS] " : "[FAIL] ") << r.name;
    for (std::size_t i = r.name.size(); i < 26; ++i) out_ << ' ';
    out_ << " measured " << num(r.measured) << "  bound " << num(r.bound);
    if (!r.detail.empty()) out_ << "  (" << r.detail << ")";
    out_ << "\n" << std::flush;
    results_.push_back(std::move(r));
  }

  void skip(const std::string& name, const char* why) {
    out_ << "[SKIP] " << name;
    for (std::size_t i = name.size(); i < 26; ++i) out_ << ' ';
    out_ << " (" << why << ")\n" << std::flush;
  }

  std::vector<CheckResult> take() { return std::move(results_); }

 private:
  std::ostream& out_;
  std::vector<CheckResult> results_;
};

double min_eigenvalue(const Mat2& m) {
  Eigen::SelfAdjointEigenSolver<Mat2> es(m);
  return es.eigenvalues().minCoeff();
}

Traj<double> random_control(const TimeGrid& grid, std::mt19937_64& rng, double amp) {
  std::uniform_real_distribution<double> dist(-amp, amp);
  std::vector<double> nodes(static_cast<std::size_t>(grid.steps()) + 1);
  for (double& v : nodes) v = dist(rng);
  return Traj<double>(grid, std::move(nodes));
}

// Smooth random direction (a few random Fourier modes). Gradient validation
// uses smooth directions so the comparison measures the adjoint itself and
// not the quadrature roughness of node-by-node noise.
Traj<double> smooth_direction(const TimeGrid& grid, std::mt19937_64& rng, double amp) {
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  const double w = kPi / grid.horizon();
  std::array<double, 4> ac{}, bc{};
  for (int m = 0; m < 4; ++m) {
    ac[m] = coef(rng);
    bc[m] = coef(rng);
  }
  std::vector<double> nodes(static_cast<std::size_t>(grid.steps()) + 1);
  for (int k = 0; k <= grid.steps(); ++k) {
    const double t = grid.time(k);
    double v = 0.0;
    for (int m = 0; m < 4; ++m) {
      v += ac[m] * std::cos((m + 1) * w * t) + bc[m] * std::sin((m + 1) * w * t);
    }
    nodes[k] = 0.25 * amp * v;
  }
  return Traj<double>(grid, std::move(nodes));
}

double dot_weighted(const TimeGrid& grid, const Traj<double>& a, const Traj<double>& b) {
  std::vector<double> prod(static_cast<std::size_t>(grid.steps()) + 1);
  for (int k = 0; k <= grid.steps(); ++k) prod[k] = a[k] * b[k];
  return trapezoid(grid, prod);
}

Traj<double> axpy(const Traj<double>& u, double h, const Traj<double>& v) {
  std::vector<double> nodes = u.node_values();
  for (int k = 0; k < static_cast<int>(nodes.size()); ++k) nodes[k] += h * v[k];
  return Traj<double>(u.grid(), std::move(nodes));
}

// Configured equilibrium solve; `affine` routes through the closed form.
EquilibriumSolution solve_configured(const RunConfig& cfg, const SystemMatrices& sys,
                                     const CostParams& cost, const PriceFunction& pf,
                                     const Vec2& mean0, const TimeGrid& grid) {
  if (cfg.solver == "affine")
    return solve_affine(sys, cost, cfg.c1, cfg.c0, mean0, grid).to_equilibrium();
  if (cfg.solver == "fixedpoint") {
    FixedPointOptions opt;
    opt.damping = cfg.damping;
    opt.max_iter = cfg.max_iter;
    if (cfg.tol > 0.0) opt.tol = cfg.tol;
    return solve_fixed_point(sys, cost, pf, mean0, grid, opt);
  }
  if (cfg.solver == "variational") {
    VariationalOptions opt;
    opt.max_iter = cfg.max_iter;
    if (cfg.tol > 0.0) opt.tol = cfg.tol;
    return solve_variational(sys, cost, pf, mean0, grid, opt);
  }
  throw ConfigError("solve.solver must be one of affine|fixedpoint|variational (got '" +
                    cfg.solver + "')");
}

AdjointOffset shifted_offset(const AdjointOffset& offset, double delta) {
  std::vector<Vec2> nodes = offset.s.node_values();
  for (Vec2& v : nodes) v(1) += delta;
  return AdjointOffset{Traj<Vec2>(offset.s.grid(), std::move(nodes))};
}

}  // namespace

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(),
                     [](const CheckResult& r) { return r.passed; });
}

std::vector<CheckResult> run_verification(const RunConfig& cfg,
                                          const VerifyOptions& opt,
                                          std::ostream& out) {
  Runner runner(out);
  std::mt19937_64 rng(kCheckSeed);

  const TimeGrid grid = cfg.make_grid();
  const SystemMatrices sys = cfg.make_system(grid);
  const CostParams cost = cfg.make_cost(grid);
  const PriceFunction configured = cfg.make_price();
  const PriceFunction price_aff = PriceFunction::affine(cfg.c1, cfg.c0);
  const PriceFunction price_sig = PriceFunction::sigmoid(cfg.d_max, cfg.a);
  const Vec2 mean0(0.5 * (cfg.soc_lo + cfg.soc_hi), 0.0);
  const std::vector<const PriceFunction*> kinds = {&price_aff, &price_sig, &configured};

  // ===== price function =====================================================

  runner.run("price_monotone", [&](CheckResult& r) {
    double worst = -1e300;
    for (const PriceFunction* pf : kinds) {
      double prev = (*pf)(-30.0);
      for (int i = 1; i <= 400; ++i) {
        const double d = -30.0 + 60.0 * i / 400.0;
        const double v = (*pf)(d);
        worst = std::max(worst, prev - v);
        prev = v;
      }
    }
    r.measured = worst;
    r.bound = 0.0;
    r.passed = worst <= r.bound;
    r.detail = "max alpha decrease over increasing samples, all price kinds";
  });

  runner.run("price_primitive", [&](CheckResult& r) {
    const double h = 1e-6;
    double worst = 0.0;
    for (const PriceFunction* pf : kinds) {
      for (int i = 0; i <= 200; ++i) {
        const double d = -25.0 + 50.0 * i / 200.0;
        const double fd = (pf->primitive(d + h) - pf->primitive(d - h)) / (2.0 * h);
        const double ref = (*pf)(d);
        worst = std::max(worst, std::abs(fd - ref) / std::max(1.0, std::abs(ref)));
      }
    }
    r.measured = worst;
    r.bound = 1e-5;
    r.passed = worst <= r.bound;
    r.detail = "central difference of the primitive vs alpha";
  });

  runner.run("price_convexity", [&](CheckResult& r) {
    std::uniform_real_distribution<double> dist(-25.0, 25.0);
    double worst = -1e300;
    for (const PriceFunction* pf : kinds) {
      for (int i = 0; i < 200; ++i) {
        const double d1 = dist(rng), d2 = dist(rng);
        const double mid = pf->primitive(0.5 * (d1 + d2));
        const double avg = 0.5 * (pf->primitive(d1) + pf->primitive(d2));
        worst = std::max(worst, mid - avg);
      }
    }
    r.measured = worst;
    r.bound = 1e-9;
    r.passed = worst <= r.bound;
    r.detail = "midpoint of the primitive vs chord";
  });

  // ===== Riccati sweeps =====================================================

  const auto order_ratio = [&](const Mat2& q_eff) {
    // Steps inside the asymptotic window (coarser pairs carry fifth-order
    // contamination and land above 20) against a much finer reference.
    const double t_short = 2.0;
    const TimeGrid g0(t_short, 0.0125), g1(t_short, 0.00625),
        gref(t_short, 0.00078125);
    const Mat2 p0 = integrate_riccati(cfg.make_system(g0), q_eff, cfg.r,
                                      cfg.q_terminal, g0).p[0];
    const Mat2 p1 = integrate_riccati(cfg.make_system(g1), q_eff, cfg.r,
                                      cfg.q_terminal, g1).p[0];
    const Mat2 pr = integrate_riccati(cfg.make_system(gref), q_eff, cfg.r,
                                      cfg.q_terminal, gref).p[0];
    const double e0 = (p0 - pr).cwiseAbs().maxCoeff();
    const double e1 = (p1 - pr).cwiseAbs().maxCoeff();
    return e0 / e1;
  };

  runner.run("riccati_order_p", [&](CheckResult& r) {
    r.measured = order_ratio(cfg.q);
    r.bound = 20.0;
    r.passed = r.measured >= 12.0 && r.measured <= 20.0;
    r.detail = "step-halving error ratio at t=0, expect within [12, 20]";
  });

  const Mat2 e22 = Vec2(0.0, 1.0).asDiagonal();
  runner.run("riccati_order_omega", [&](CheckResult& r) {
    r.measured = order_ratio(cfg.q + cfg.c1 * e22);
    r.bound = 20.0;
    r.passed = r.measured >= 12.0 && r.measured <= 20.0;
    r.detail = "step-halving error ratio at t=0, expect within [12, 20]";
  });

  const RiccatiSolution base_p = integrate_riccati(sys, cfg.q, cfg.r, cfg.q_terminal, grid);
  const RiccatiSolution base_omega =
      integrate_riccati(sys, Mat2(cfg.q + cfg.c1 * e22), cfg.r, cfg.q_terminal, grid);

  runner.run("riccati_psd_symmetric", [&](CheckResult& r) {
    double worst = 0.0;
    for (int k = 0; k <= grid.steps(); ++k) {
      const Mat2& p = base_p.p[k];
      worst = std::max(worst, (p - p.transpose()).cwiseAbs().maxCoeff());
      worst = std::max(worst, std::max(0.0, -min_eigenvalue(p)));
    }
    r.measured = worst;
    r.bound = 1e-10;
    r.passed = worst <= r.bound;
    r.detail = "symmetry defect and negative spectrum of P over all nodes";
  });

  runner.run("riccati_comparison", [&](CheckResult& r) {
    double worst = 0.0;
    for (int k = 0; k <= grid.steps(); ++k)
      worst = std::max(worst, -min_eigenvalue(Mat2(base_omega.p[k] - base_p.p[k])));
    r.measured = worst;
    r.bound = 1e-8;
    r.passed = worst <= r.bound;
    r.detail = "most negative eigenvalue of Omega - P over all nodes";
  });

  runner.run("riccati_bounded", [&](CheckResult& r) {
    double worst = 0.0;
    for (double horizon : {8.0, 64.0}) {
      const TimeGrid g(horizon, 0.01);
      const SystemMatrices s = cfg.make_system(g);
      for (double c1 : {cfg.c1, 100.0}) {
        const RiccatiSolution sol =
            integrate_riccati(s, Mat2(cfg.q + c1 * e22), cfg.r, cfg.q_terminal, g);
        for (int k = 0; k <= g.steps(); ++k)
          worst = std::max(worst, sol.p[k].cwiseAbs().maxCoeff());
      }
    }
    r.measured = worst;
    r.bound = 1e6;
    r.passed = std::isfinite(worst) && worst <= r.bound;
    r.detail = "sup norm of Omega for T up to 64 h and c1 up to 100";
  });

  const AffineEquilibrium aff = solve_affine(sys, cost, cfg.c1, cfg.c0, mean0, grid);

  runner.run("pi_consistency", [&](CheckResult& r) {
    r.measured = pi_consistency_check(aff, sys, cfg.r, cfg.c1, grid);
    r.bound = 1e-6;
    r.passed = r.measured <= r.bound;
    r.detail = "independent integration of the Riccati gap Omega - P";
  });

  // ===== auxiliary problem ==================================================

  const auto gradient_check = [&](const PriceFunction& pf, CheckResult& r) {
    const Traj<double> u = random_control(grid, rng, 2.0);
    const AuxiliaryGradient g = auxiliary_gradient(u, sys, cost, pf, mean0);
    const double h = 1e-4;
    double worst = 0.0;
    for (int dir = 0; dir < 10; ++dir) {
      const Traj<double> v = smooth_direction(grid, rng, 1.0);
      const double analytic = dot_weighted(grid, g.gradient, v);
      const double jp = auxiliary_cost(axpy(u, h, v), sys, cost, pf, mean0);
      const double jm = auxiliary_cost(axpy(u, -h, v), sys, cost, pf, mean0);
      const double fd = (jp - jm) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic - fd) / std::max(1.0, std::abs(fd)));
    }
    r.measured = worst;
    r.bound = 1e-4;
    r.passed = worst <= r.bound;
    r.detail = "costate gradient vs central differences, 10 directions";
  };

  runner.run("gradient_affine",
             [&](CheckResult& r) { gradient_check(price_aff, r); });
  runner.run("gradient_sigmoid",
             [&](CheckResult& r) { gradient_check(price_sig, r); });

  const auto convexity_check = [&](const PriceFunction& pf, CheckResult& r) {
    double worst_margin = 1e300;
    for (int i = 0; i < 20; ++i) {
      const Traj<double> u = random_control(grid, rng, 3.0);
      const Traj<double> v = random_control(grid, rng, 3.0);
      const double ju = auxiliary_cost(u, sys, cost, pf, mean0);
      const double jv = auxiliary_cost(v, sys, cost, pf, mean0);
      std::vector<double> mid_nodes(static_cast<std::size_t>(grid.steps()) + 1);
      for (int k = 0; k <= grid.steps(); ++k) mid_nodes[k] = 0.5 * (u[k] + v[k]);
      const double jmid =
          auxiliary_cost(Traj<double>(grid, std::move(mid_nodes)), sys, cost, pf, mean0);
      worst_margin = std::min(worst_margin, 0.5 * (ju + jv) - jmid);
    }
    r.measured = worst_margin;
    r.bound = 0.0;
    r.passed = worst_margin > 0.0;
    r.detail = "min of chord-minus-midpoint cost over 20 random pairs";
  };

  runner.run("convexity_affine",
             [&](CheckResult& r) { convexity_check(price_aff, r); });
  runner.run("convexity_sigmoid",
             [&](CheckResult& r) { convexity_check(price_sig, r); });

  runner.run("coercivity", [&](CheckResult& r) {
    // Symmetrized second difference S(tau) = J(tau u) + J(-tau u) - 2 J(0)
    // cancels the linear cost terms, so S grows like the quadratic part and
    // S(2 tau) / S(tau) approaches 4 from the coercive control penalty.
    const Traj<double> u = random_control(grid, rng, 1.0);
    const Traj<double> zero = Traj<double>::constant(grid, 0.0);
    const double j0 = auxiliary_cost(zero, sys, cost, configured, mean0);
    auto s_of = [&](double tau) {
      return auxiliary_cost(axpy(zero, tau, u), sys, cost, configured, mean0) +
             auxiliary_cost(axpy(zero, -tau, u), sys, cost, configured, mean0) -
             2.0 * j0;
    };
    const double ratio = s_of(16.0) / s_of(8.0);
    r.measured = ratio;
    r.bound = 0.8;
    r.passed = std::abs(ratio - 4.0) <= r.bound;
    r.detail = "quadratic growth ratio of the cost under control scaling, expect ~4";
  });

  // ===== equilibrium solvers ================================================

  runner.run("cross_solver_agreement", [&](CheckResult& r) {
    const EquilibriumSolution closed = aff.to_equilibrium();
    const EquilibriumSolution fp =
        solve_fixed_point(sys, cost, price_aff, mean0, grid);
    VariationalOptions vopt;
    vopt.tol = 1e-7;
    const EquilibriumSolution var =
        solve_variational(sys, cost, price_aff, mean0, grid, vopt);
    double worst = 0.0;
    const auto gap = [&](const Traj<Vec2>& a, const Traj<Vec2>& b) {
      for (int k = 0; k <= grid.steps(); ++k)
        worst = std::max(worst, std::abs(a[k](1) - b[k](1)));
    };
    gap(closed.mean, fp.mean);
    gap(closed.mean, var.mean);
    gap(fp.mean, var.mean);
    r.measured = worst;
    r.bound = 1e-4;
    r.passed = worst <= r.bound;
    r.detail = "pairwise sup gap of the mean power across all three solvers, affine price";
  });

  EquilibriumSolution sol = solve_configured(cfg, sys, cost, configured, mean0, grid);
  if (opt.perturb_s != 0.0) sol.offset = shifted_offset(sol.offset, opt.perturb_s);

  runner.run("tpbvp_residual", [&](CheckResult& r) {
    const TpbvpResidual res = tpbvp_residual(sol, sys, cost, configured, mean0, grid);
    r.measured = std::max(res.backward, res.forward);
    r.bound = 1e-5;
    r.passed = r.measured <= r.bound;
    r.detail = "sup re-integration defect of the offset and mean equations";
  });

  runner.run("tpbvp_boundary", [&](CheckResult& r) {
    const TpbvpResidual res = tpbvp_residual(sol, sys, cost, configured, mean0, grid);
    r.measured = res.terminal;
    r.bound = 1e-12;
    r.passed = r.measured <= r.bound;
    r.detail = "terminal offset and initial mean boundary defects";
  });

  runner.run("isomorphism_roundtrip", [&](CheckResult& r) {
    const PMPTriplet trip = tpbvp_to_pmp(sol.mean, sol.offset, sol.riccati, cost.r);
    const MeanOffsetPair back = pmp_to_tpbvp(trip, sol.riccati);
    const double gap = std::max(sup_node_diff(back.mean, sol.mean),
                                sup_node_diff(back.offset.s, sol.offset.s));
    r.measured = gap;
    r.bound = 1e-12;
    r.passed = gap <= r.bound;
    r.detail = "mean/offset -> state/costate -> mean/offset";
  });

  runner.run("hjb_residual", [&](CheckResult& r) {
    const Traj<double> phi = compute_phi(sol.riccati, sol.offset, sys, cost, grid);
    std::uniform_int_distribution<int> node_dist(3, grid.steps() - 3);
    std::uniform_real_distribution<double> soc_dist(-15.0, 15.0),
        pow_dist(-8.0, 8.0);
    const double dt = grid.dt();
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const int k = node_dist(rng);
      const double t = grid.time(k);
      const Vec2 z = sol.mean[k] + Vec2(soc_dist(rng), pow_dist(rng));
      const auto v = [&](double tt, const Vec2& zz) {
        return value_function(sol.riccati, sol.offset, phi, tt, zz);
      };
      // 6th order time stencil. Even so, the Riccati relaxation near the
      // horizon (rates of order p22/r) leaves a truncation residual of a few
      // 1e-3 at the reference step 0.005; the unit suite pins its sixth-order
      // decay under refinement, so the bound here only needs to separate that
      // truncation floor from a genuinely wrong pde term.
      const double vt =
          (-v(grid.time(k - 3), z) + 9.0 * v(grid.time(k - 2), z) -
           45.0 * v(grid.time(k - 1), z) + 45.0 * v(grid.time(k + 1), z) -
           9.0 * v(grid.time(k + 2), z) + v(grid.time(k + 3), z)) /
          (60.0 * dt);
      const double h = 0.5;
      const Vec2 e1(1.0, 0.0), e2v(0.0, 1.0);
      const Vec2 vz((v(t, z + h * e1) - v(t, z - h * e1)) / (2.0 * h),
                    (v(t, z + h * e2v) - v(t, z - h * e2v)) / (2.0 * h));
      const double vzz11 =
          (v(t, z + h * e1) - 2.0 * v(t, z) + v(t, z - h * e1)) / (h * h);
      const double vzz22 =
          (v(t, z + h * e2v) - 2.0 * v(t, z) + v(t, z - h * e2v)) / (h * h);
      const Vec2 rx = cost.x_ref.eval(t);
      const double price = sol.price[k];
      const double quad = 0.5 * (z - rx).dot(cost.q * (z - rx)) + price * z(1);
      const double vzb = vz.dot(sys.b);
      const double drift = vz.dot(sys.a * z + sys.f(t));
      const double trace = 0.5 * (sys.sigma(0, 0) * sys.sigma(0, 0) * vzz11 +
                                  sys.sigma(1, 1) * sys.sigma(1, 1) * vzz22);
      const double residual = vt + quad + drift - vzb * vzb / (2.0 * cost.r) + trace;
      worst = std::max(worst, std::abs(residual));
    }
    r.measured = worst;
    r.bound = 1e-2;
    r.passed = worst <= r.bound;
    r.detail = "time/state finite differences of the value function, 50 points; "
               "floor is the time stencil's truncation in the terminal layer";
  });

  runner.run("offset_linearity", [&](CheckResult& r) {
    // Structural superposition of the offset sweep in (price, x_ref, f,
    // terminal reference); moderate synthetic inputs keep rounding far below
    // the bound.
    const auto make_cost_variant = [&](const Vec2& rx, const Vec2& rxt) {
      CostParams c = cost;
      c.x_ref = Traj<Vec2>::constant(grid, rx);
      c.x_ref_terminal = rxt;
      return c;
    };
    const auto make_drain = [&](double scale) {
      ModelParams p;
      p.kappa = cfg.kappa;
      p.sigma1 = cfg.sigma1;
      p.sigma2 = cfg.sigma2;
      p.e_cap = cfg.e_cap;
      p.drain.assign(static_cast<std::size_t>(grid.steps()) + 1, 0.0);
      for (int k = 0; k <= grid.steps(); ++k)
        p.drain[k] = scale * (1.0 + std::sin(grid.time(k)));
      return build_system(p, grid);
    };
    const CostParams cost_a = make_cost_variant(Vec2(5.0, 1.0), Vec2(3.0, 0.0));
    const CostParams cost_b = make_cost_variant(Vec2(-2.0, 0.5), Vec2(1.0, 0.5));
    const CostParams cost_ab = make_cost_variant(Vec2(3.0, 1.5), Vec2(4.0, 0.5));
    const SystemMatrices sys_a = make_drain(0.3);
    const SystemMatrices sys_b = make_drain(0.1);
    const SystemMatrices sys_ab = make_drain(0.4);
    const ScalarSignal p_a([](double t) { return 1.5 + 0.3 * t; });
    const ScalarSignal p_b([](double t) { return -0.7 + 0.05 * t * t; });
    const ScalarSignal p_ab([](double t) { return 1.5 + 0.3 * t - 0.7 + 0.05 * t * t; });
    const AdjointOffset sa = integrate_offset(base_p, sys_a, cost_a, p_a, grid);
    const AdjointOffset sb = integrate_offset(base_p, sys_b, cost_b, p_b, grid);
    const AdjointOffset sab = integrate_offset(base_p, sys_ab, cost_ab, p_ab, grid);
    double worst = 0.0;
    for (int k = 0; k <= grid.steps(); ++k)
      worst = std::max(worst, (sab.s[k] - sa.s[k] - sb.s[k]).cwiseAbs().maxCoeff());
    r.measured = worst;
    r.bound = 1e-10;
    r.passed = worst <= r.bound;
    r.detail = "superposition of price, reference, drain and terminal inputs";
  });

  runner.run("uniqueness_probe", [&](CheckResult& r) {
    std::vector<Traj<Vec2>> means;
    for (int start = 0; start < 5; ++start) {
      VariationalOptions vopt;
      vopt.tol = 1e-7;
      vopt.initial_control = random_control(grid, rng, 3.0);
      means.push_back(
          solve_variational(sys, cost, configured, mean0, grid, vopt).mean);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i)
      for (std::size_t j = i + 1; j < means.size(); ++j)
        worst = std::max(worst, sup_node_diff(means[i], means[j]));
    r.measured = worst;
    r.bound = 1e-5;
    r.passed = worst <= r.bound;
    r.detail = "pairwise sup gap of the mean from 5 random solver starts";
  });

  // ===== population =========================================================

  const FeedbackStrategy strat = equilibrium_strategy(sol, cost.r);

  runner.run("population_determinism", [&](CheckResult& r) {
    SimOptions so;
    so.n_agents = cfg.n_agents;
    so.seed = cfg.seed;
    so.soc_lo = cfg.soc_lo;
    so.soc_hi = cfg.soc_hi;
    so.store_agents = false;
    so.threads = 1;
    const SimResult one = simulate_population(strat, sys, cost, configured, grid, so);
    so.threads = 3;
    const SimResult three = simulate_population(strat, sys, cost, configured, grid, so);
    double worst = std::abs(one.avg_cost - three.avg_cost);
    for (int k = 0; k <= grid.steps(); ++k) {
      worst = std::max(worst,
                       (one.mean_emp[k] - three.mean_emp[k]).cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(one.soc_q50[k] - three.soc_q50[k]));
      worst = std::max(worst, std::abs(one.price_emp[k] - three.price_emp[k]));
    }
    r.measured = worst;
    r.bound = 0.0;
    r.passed = worst == 0.0;
    r.detail = "bitwise identity of a 1-thread and a 3-thread run";
  });

  ModelParams noiseless;
  noiseless.kappa = cfg.kappa;
  noiseless.sigma1 = 0.0;
  noiseless.sigma2 = 0.0;
  noiseless.e_cap = cfg.e_cap;
  if (!cfg.b_table.empty()) noiseless.drain = load_drain_table(cfg.b_table, grid);
  const SystemMatrices sys0 = build_system(noiseless, grid);

  runner.run("energy_bookkeeping", [&](CheckResult& r) {
    SimOptions so;
    so.n_agents = 8;
    so.seed = cfg.seed;
    so.soc_lo = cfg.soc_lo;
    so.soc_hi = cfg.soc_hi;
    so.store_agents = true;
    const SimResult sim = simulate_population(strat, sys0, cost, configured, grid, so);
    const int nodes = grid.steps() + 1;
    double worst = 0.0;
    for (int i = 0; i < so.n_agents; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * nodes;
      std::vector<double> rate(nodes);
      for (int k = 0; k < nodes; ++k)
        rate[k] = cfg.kappa * sim.power[base + k] - sys0.drain[k];
      const double gained = sim.soc[base + nodes - 1] - sim.soc[base];
      worst = std::max(worst, std::abs(gained - trapezoid(grid, rate)));
    }
    r.measured = worst;
    r.bound = 0.05;
    r.passed = worst <= r.bound;
    r.detail = "noise-free SOC gain vs integrated charging power, 8 agents, kWh";
  });

  runner.run("value_deterministic", [&](CheckResult& r) {
    SimOptions so;
    so.n_agents = 1;
    so.seed = cfg.seed;
    so.soc_lo = mean0(0);
    so.soc_hi = mean0(0);
    so.store_agents = true;
    so.cost_price = sol.price;
    const SimResult sim = simulate_population(strat, sys0, cost, configured, grid, so);
    const Traj<double> phi = compute_phi(sol.riccati, sol.offset, sys0, cost, grid);
    const double value = value_function(sol.riccati, sol.offset, phi, 0.0, mean0);
    r.measured = std::abs(sim.agent_costs[0] - value) / std::max(1.0, std::abs(value));
    r.bound = 1e-3;
    r.passed = r.measured <= r.bound;
    r.detail = "noise-free realized cost vs value function at the start state";
  });

  if (opt.quick) {
    runner.skip("value_monte_carlo", "--quick");
    runner.skip("consistency_scaling", "--quick");
  } else {
    runner.run("value_monte_carlo", [&](CheckResult& r) {
      SimOptions so;
      so.n_agents = 10000;
      so.seed = cfg.seed;
      so.soc_lo = mean0(0);
      so.soc_hi = mean0(0);
      so.store_agents = false;
      so.cost_price = sol.price;
      const SimResult sim = simulate_population(strat, sys, cost, configured, grid, so);
      const Traj<double> phi = compute_phi(sol.riccati, sol.offset, sys, cost, grid);
      const double value = value_function(sol.riccati, sol.offset, phi, 0.0, mean0);
      double var = 0.0;
      for (double c : sim.agent_costs) var += (c - sim.avg_cost) * (c - sim.avg_cost);
      var /= (sim.agent_costs.size() - 1.0);
      const double se = std::sqrt(var / sim.agent_costs.size());
      r.measured = std::abs(sim.avg_cost - value) / se;
      r.bound = 2.0;
      r.passed = r.measured <= r.bound;
      r.detail = "Monte Carlo average cost vs value function, units of standard error";
    });

    runner.run("consistency_scaling", [&](CheckResult& r) {
      std::vector<double> ratios;
      for (int s = 0; s < 20; ++s) {
        SimOptions so;
        so.seed = cfg.seed + 1000 + s;
        so.soc_lo = cfg.soc_lo;
        so.soc_hi = cfg.soc_hi;
        so.store_agents = false;
        so.n_agents = 200;
        const double gap200 = consistency_error(
            simulate_population(strat, sys, cost, configured, grid, so), sol.mean);
        so.n_agents = 800;
        const double gap800 = consistency_error(
            simulate_population(strat, sys, cost, configured, grid, so), sol.mean);
        ratios.push_back(gap200 / gap800);
      }
      std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2,
                       ratios.end());
      r.measured = ratios[ratios.size() / 2];
      r.bound = 2.6;
      r.passed = r.measured >= 1.6 && r.measured <= 2.6;
      r.detail = "median sup-gap ratio N=200 vs N=800 over 20 seeds, expect ~2";
    });
  }

  return runner.take();
}

}  // namespace mfg

#include "mfg/affine.hpp"

#include <chrono>
#include <utility>

#include "mfg/rk4.hpp"

namespace mfg {

namespace {

Mat2 symmetrized(const Mat2& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

EquilibriumSolution AffineEquilibrium::to_equilibrium() const {
  EquilibriumSolution out;
  out.riccati = riccati;
  out.offset = offset;
  out.mean = mean;
  out.price = price;
  out.diag = diag;
  return out;
}

AffineEquilibrium solve_affine(const SystemMatrices& sys, const CostParams& cost,
                               double c1, double c0, const Vec2& mean0,
                               const TimeGrid& grid) {
  // Validates c1 > 0 and gives us alpha for the final price samples.
  PriceFunction price_fn = PriceFunction::affine(c1, c0);
  cost.validate(grid);
  auto t0 = std::chrono::steady_clock::now();

  AffineEquilibrium out;
  const Mat2 e22 = Vec2(0.0, 1.0) * Vec2(0.0, 1.0).transpose();
  const Mat2 brb = sys.control_outer(cost.r);
  const Mat2 at = sys.a.transpose();
  const Vec2 e2(0.0, 1.0);

  out.riccati = integrate_riccati(sys, cost.q, cost.r, cost.q_terminal, grid);
  RiccatiSolution eff =
      integrate_riccati(sys, Mat2(cost.q + c1 * e22), cost.r, cost.q_terminal, grid);
  out.omega = eff.p;

  auto beta_rhs = [&](double t, const Vec2& beta) -> Vec2 {
    Mat2 om = out.omega.stage(t);
    return -((at - om * brb) * beta + om * sys.f(t) -
             cost.q * cost.x_ref.eval(t) - c1 * cost.g_ref.eval(t) * e2 + c0 * e2);
  };
  Vec2 beta_terminal = -(cost.q_terminal * cost.x_ref_terminal);
  out.beta = detail::rk4_path<Vec2>(grid, beta_terminal, /*forward=*/false,
                                    beta_rhs, "affine offset");

  auto mean_rhs = [&](double t, const Vec2& m) -> Vec2 {
    return (sys.a - brb * out.omega.stage(t)) * m - brb * out.beta.stage(t) +
           sys.f(t);
  };
  out.mean =
      detail::rk4_path<Vec2>(grid, mean0, /*forward=*/true, mean_rhs, "affine mean");

  // s = (Omega - P) x-bar + beta on the half grid, derivatives by the product
  // rule so downstream stage queries keep their accuracy. At the horizon both
  // Riccati sweeps hold Q_T exactly, so s(T) = beta(T) = -Q_T r_x(T) exactly.
  {
    const int n = grid.half_points();
    std::vector<Vec2> v(n), dv(n);
    for (int j = 0; j < n; ++j) {
      Mat2 gap = out.omega.half_value(j) - out.riccati.p.half_value(j);
      Mat2 dgap = out.omega.half_deriv(j) - out.riccati.p.half_deriv(j);
      v[j] = gap * out.mean.half_value(j) + out.beta.half_value(j);
      dv[j] = dgap * out.mean.half_value(j) + gap * out.mean.half_deriv(j) +
              out.beta.half_deriv(j);
    }
    out.offset.s = Traj<Vec2>::dense(grid, std::move(v), std::move(dv));
  }

  out.price = price_nodes(price_fn, out.mean, cost.g_ref);
  out.diag.method = "affine";
  out.diag.iterations = 1;
  out.diag.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

double pi_consistency_check(const AffineEquilibrium& aff, const SystemMatrices& sys,
                            double r, double c1, const TimeGrid& grid) {
  const Mat2 e22 = Vec2(0.0, 1.0) * Vec2(0.0, 1.0).transpose();
  const Mat2 brb = sys.control_outer(r);
  auto rhs = [&](double t, const Mat2& pi) -> Mat2 {
    Mat2 a_cl = sys.a - brb * aff.riccati.p.stage(t);
    return -(a_cl.transpose() * pi + pi * a_cl - pi * brb * pi + c1 * e22);
  };
  Traj<Mat2> pi = detail::rk4_path<Mat2>(
      grid, Mat2::Zero(), /*forward=*/false, rhs, "feedback gap",
      [](Mat2 m) { return symmetrized(m); });
  double sup = 0.0;
  for (int k = 0; k < grid.nodes(); ++k) {
    Mat2 gap = aff.omega[k] - aff.riccati.p[k];
    sup = std::max(sup, detail::sup_abs(Mat2(pi[k] - gap)));
  }
  return sup;
}

}  // namespace mfg

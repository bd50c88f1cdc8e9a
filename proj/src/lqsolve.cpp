#include "mfg/lqsolve.hpp"

#include "mfg/rk4.hpp"

namespace mfg {

RiccatiSolution integrate_riccati(const SystemMatrices& sys, const Mat2& q,
                                  double r, const Mat2& q_terminal,
                                  const TimeGrid& grid) {
  const Mat2 at = sys.a.transpose();
  const Mat2 brb = sys.control_outer(r);
  auto rhs = [&](double, const Mat2& p) -> Mat2 {
    return -(at * p + p * sys.a - p * brb * p + q);
  };
  auto symmetrize = [](Mat2 p) -> Mat2 { return 0.5 * (p + p.transpose()); };
  RiccatiSolution out;
  out.p = detail::rk4_path<Mat2>(grid, q_terminal, /*forward=*/false, rhs,
                                 "riccati", symmetrize);
  return out;
}

AdjointOffset integrate_offset(const RiccatiSolution& riccati,
                               const SystemMatrices& sys, const CostParams& cost,
                               const ScalarSignal& price, const TimeGrid& grid) {
  require_same_grid(riccati.p.grid(), grid, "integrate_offset");
  const Mat2 at = sys.a.transpose();
  const Mat2 brb = sys.control_outer(cost.r);
  const Vec2 e2(0.0, 1.0);
  auto rhs = [&](double t, const Vec2& s) -> Vec2 {
    Mat2 p = riccati.p.stage(t);
    return -((at - p * brb) * s + p * sys.f(t) + price(t) * e2 -
             cost.q * cost.x_ref.eval(t));
  };
  Vec2 terminal = -(cost.q_terminal * cost.x_ref_terminal);
  AdjointOffset out;
  out.s = detail::rk4_path<Vec2>(grid, terminal, /*forward=*/false, rhs, "offset");
  return out;
}

Traj<Vec2> integrate_mean_forward(const RiccatiSolution& riccati,
                                  const AdjointOffset& offset,
                                  const SystemMatrices& sys, double r,
                                  const Vec2& mean0, const TimeGrid& grid) {
  require_same_grid(riccati.p.grid(), grid, "integrate_mean_forward");
  require_same_grid(offset.s.grid(), grid, "integrate_mean_forward");
  const Mat2 brb = sys.control_outer(r);
  auto rhs = [&](double t, const Vec2& m) -> Vec2 {
    return (sys.a - brb * riccati.p.stage(t)) * m - brb * offset.s.stage(t) +
           sys.f(t);
  };
  return detail::rk4_path<Vec2>(grid, mean0, /*forward=*/true, rhs, "mean");
}

Traj<double> compute_phi(const RiccatiSolution& riccati, const AdjointOffset& offset,
                         const SystemMatrices& sys, const CostParams& cost,
                         const TimeGrid& grid) {
  require_same_grid(riccati.p.grid(), grid, "compute_phi");
  require_same_grid(offset.s.grid(), grid, "compute_phi");
  const Mat2 noise = sys.sigma * sys.sigma.transpose();
  auto rhs = [&](double t, const double&) -> double {
    Vec2 s = offset.s.stage(t);
    Mat2 p = riccati.p.stage(t);
    Vec2 rx = cost.x_ref.eval(t);
    double control = 0.5 * s(1) * s(1) / cost.r;
    double drift = s.dot(sys.f(t));
    double trace = 0.5 * (noise * p).trace();
    double ref = 0.5 * rx.dot(cost.q * rx);
    return control - drift - trace - ref;
  };
  double terminal =
      0.5 * cost.x_ref_terminal.dot(cost.q_terminal * cost.x_ref_terminal);
  return detail::rk4_path<double>(grid, terminal, /*forward=*/false, rhs, "phi");
}

double feedback_control(const RiccatiSolution& riccati, const AdjointOffset& offset,
                        double t, const Vec2& z, double r) {
  Mat2 p = riccati.p.eval(t);
  Vec2 s = offset.s.eval(t);
  return -(p(1, 0) * z(0) + p(1, 1) * z(1) + s(1)) / r;
}

double value_function(const RiccatiSolution& riccati, const AdjointOffset& offset,
                      const Traj<double>& phi, double t, const Vec2& z) {
  Mat2 p = riccati.p.eval(t);
  Vec2 s = offset.s.eval(t);
  return 0.5 * z.dot(p * z) + s.dot(z) + phi.eval(t);
}

}  // namespace mfg

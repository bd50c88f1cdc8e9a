#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfg/lqsolve.hpp"

namespace mfg {

// ============================================================================
// Price-coordinated equilibrium of the charging population.
//
// An equilibrium is a price path p(t) together with the best-response value
// data (P, s) and the induced mean trajectory x-bar such that
// p(t) = alpha(x-bar_2(t) - r_g(t)). Two general solvers are provided:
//
//  * solve_fixed_point: damped sweep iteration on x-bar. Cheap but only
//    locally convergent; throws ConvergenceError when it stalls or diverges.
//  * solve_variational: minimizes the equivalent deterministic control cost
//
//      J(u) = int (1/2) y'Qy + (1/2) R u^2 + Phi(y_2 - r_g) - r_x'Qy dt
//             + (1/2)(y(T) - r_x(T))' Q_T (y(T) - r_x(T)),
//      dy/dt = A y + B u + f,  y(0) = mean0,
//
//    with Phi the price primitive. J is strictly convex and coercive, so the
//    minimizer exists, is unique, and is the equilibrium mean flow; this is
//    the authoritative solver. The method is monotone first-order: exact
//    discrete gradients preconditioned by a frozen-curvature LQ model (one
//    Riccati sweep per iteration) with Armijo backtracking, followed by a
//    short damped consistency polish so the returned pair reproduces itself
//    under offset/mean re-integration.
//
// Both solvers return the same solution type; the optimal feedback for any
// agent state z is feedback_control(riccati, offset, t, z, r).
// ============================================================================

struct SolverDiagnostics {
  std::string method;
  int iterations = 0;          // sweeps, or descent iterations + polish sweeps
  double residual = 0.0;       // last sup-norm mean change between sweeps
  double gradient_norm = 0.0;  // final sup-norm of the cost gradient (variational)
  double wall_seconds = 0.0;
  std::vector<double> cost_history;  // variational iterate costs, nonincreasing
};

struct EquilibriumSolution {
  RiccatiSolution riccati;
  AdjointOffset offset;
  Traj<Vec2> mean;
  Traj<double> price;  // p(t) sampled at nodes
  SolverDiagnostics diag;
};

struct FixedPointOptions {
  double damping = 0.5;  // in (0, 1]
  double tol = 1e-8;     // sup-norm change of the mean between sweeps
  int max_iter = 500;
};

struct VariationalOptions {
  double tol = 1e-6;  // sup-norm of the cost gradient density
  int max_iter = 500;
  std::optional<Traj<double>> initial_control;  // default: u == 0
};

EquilibriumSolution solve_fixed_point(const SystemMatrices& sys,
                                      const CostParams& cost,
                                      const PriceFunction& price_fn,
                                      const Vec2& mean0, const TimeGrid& grid,
                                      const FixedPointOptions& opt = {});

EquilibriumSolution solve_variational(const SystemMatrices& sys,
                                      const CostParams& cost,
                                      const PriceFunction& price_fn,
                                      const Vec2& mean0, const TimeGrid& grid,
                                      const VariationalOptions& opt = {});

// ----------------------------------------------------------------------------
// Auxiliary problem pieces (exposed for testing and diagnostics).
// Controls are node-sampled and interpolate linearly inside integrator stages.
// ----------------------------------------------------------------------------

double auxiliary_cost(const Traj<double>& control, const SystemMatrices& sys,
                      const CostParams& cost, const PriceFunction& price_fn,
                      const Vec2& mean0);

struct AuxiliaryGradient {
  Traj<double> gradient;  // exact gradient density of the discrete cost
  Traj<Vec2> state;       // y
  Traj<Vec2> costate;     // lambda
  double cost = 0.0;
};

// Gradient via the costate sweep
// -dlambda/dt = Q y - Q r_x + alpha(y_2 - r_g) e2 + A' lambda,
//  lambda(T) = Q_T (y(T) - r_x(T)).
// The returned costate is that RK4 solve; the returned gradient is the exact
// reverse-mode derivative of the evaluated discrete cost (trapezoid rule
// composed with the RK4 state map) expressed as a node density, which equals
// R u(t_k) + lambda_2(t_k) up to the discretization order. Pairing it with a
// direction under trapezoid weights gives the exact directional derivative of
// auxiliary_cost.
AuxiliaryGradient auxiliary_gradient(const Traj<double>& control,
                                     const SystemMatrices& sys,
                                     const CostParams& cost,
                                     const PriceFunction& price_fn,
                                     const Vec2& mean0);

// ----------------------------------------------------------------------------
// The lossless change of variables between the minimizer triplet and the
// equilibrium pair: mean = y, s = lambda - P y (and back).
// ----------------------------------------------------------------------------

struct PMPTriplet {
  Traj<Vec2> state;
  Traj<Vec2> costate;
  Traj<double> control;
};

struct MeanOffsetPair {
  Traj<Vec2> mean;
  AdjointOffset offset;
};

MeanOffsetPair pmp_to_tpbvp(const PMPTriplet& triplet, const RiccatiSolution& riccati);
PMPTriplet tpbvp_to_pmp(const Traj<Vec2>& mean, const AdjointOffset& offset,
                        const RiccatiSolution& riccati, double r);

// ----------------------------------------------------------------------------
// Defect of a candidate solution against the discretized two-point boundary
// value system: backward/forward are the sup-node gaps to a re-integration of
// the offset (given the solution's own price path) and of the mean (given the
// solution's own offset); terminal adds both boundary condition defects.
// ----------------------------------------------------------------------------

struct TpbvpResidual {
  double backward = 0.0;
  double forward = 0.0;
  double terminal = 0.0;
};

TpbvpResidual tpbvp_residual(const EquilibriumSolution& sol,
                             const SystemMatrices& sys, const CostParams& cost,
                             const PriceFunction& price_fn, const Vec2& mean0,
                             const TimeGrid& grid);

// Price signal induced by a mean trajectory; the signal queries the mean with
// stage accuracy so downstream integrations keep their order.
ScalarSignal price_signal(const PriceFunction& price_fn, const Traj<Vec2>& mean,
                          const Traj<double>& g_ref);
Traj<double> price_nodes(const PriceFunction& price_fn, const Traj<Vec2>& mean,
                         const Traj<double>& g_ref);

}  // namespace mfg

#pragma once

#include "mfg/equilibrium.hpp"

namespace mfg {

// ============================================================================
// Closed-form equilibrium for the affine price alpha(d) = c1 d + c0.
//
// With an affine price the coupled mean/offset system collapses to one extra
// Riccati sweep: write lambda = P x-bar + s = Omega x-bar + beta, where
//
//   -dOmega/dt = A'Omega + Omega A - Omega B R^-1 B' Omega + Q + c1 e2 e2',
//    Omega(T) = Q_T,
//   -dbeta/dt  = (A' - Omega B R^-1 B') beta + Omega f - Q r_x
//                - c1 r_g e2 + c0 e2,   beta(T) = -Q_T r_x(T),
//
// then x-bar integrates forward under the Omega/beta feedback and
// s = (Omega - P) x-bar + beta. No iteration is involved, so this pipeline
// doubles as the reference answer the two general solvers are checked against.
// ============================================================================

struct AffineEquilibrium {
  RiccatiSolution riccati;  // plain P, shared with the general solvers
  Traj<Mat2> omega;
  Traj<Vec2> beta;
  Traj<Vec2> mean;
  AdjointOffset offset;  // s = (Omega - P) mean + beta
  Traj<double> price;
  SolverDiagnostics diag;

  EquilibriumSolution to_equilibrium() const;
};

AffineEquilibrium solve_affine(const SystemMatrices& sys, const CostParams& cost,
                               double c1, double c0, const Vec2& mean0,
                               const TimeGrid& grid);

// Independent check of the decomposition: the gap Pi = Omega - P must itself
// solve -dPi/dt = A_cl' Pi + Pi A_cl - Pi B R^-1 B' Pi + c1 e2 e2', Pi(T) = 0,
// with A_cl(t) = A - B R^-1 B' P(t). Integrates that equation directly and
// returns the sup-node defect against Omega - P.
double pi_consistency_check(const AffineEquilibrium& aff, const SystemMatrices& sys,
                            double r, double c1, const TimeGrid& grid);

}  // namespace mfg

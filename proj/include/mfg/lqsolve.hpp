#pragma once

#include <functional>

#include "mfg/model.hpp"

namespace mfg {

// ============================================================================
// Finite-horizon LQ machinery for a single agent best-responding to a given
// price path p(t). The value function is the quadratic ansatz
//
//   V(t, z) = (1/2) z' P(t) z + s(t)' z + phi(t),
//
// with P from the matrix Riccati equation, s from a linear backward ODE that
// carries the price and the references, and phi the scalar offset. The
// optimal feedback is u*(t, z) = -(1/R) (P(t) z + s(t))_2.
//
// All backward integrations store node values in forward index order.
// ============================================================================

// Scalar signal abstraction so price inputs can be either sampled
// trajectories (linear between nodes) or exact functions of time.
class ScalarSignal {
 public:
  ScalarSignal(double constant) : fn_([constant](double) { return constant; }) {}
  ScalarSignal(const Traj<double>& traj) : fn_([traj](double t) { return traj.eval(t); }) {}
  ScalarSignal(std::function<double(double)> fn) : fn_(std::move(fn)) {}
  double operator()(double t) const { return fn_(t); }

 private:
  std::function<double(double)> fn_;
};

struct RiccatiSolution {
  Traj<Mat2> p;
};

struct AdjointOffset {
  Traj<Vec2> s;
};

// Backward Riccati sweep: -dP/dt = A'P + PA - P B R^-1 B' P + Q, P(T) = Q_T.
// Each step is symmetrized; a norm guard throws IntegrationError on blow-up.
RiccatiSolution integrate_riccati(const SystemMatrices& sys, const Mat2& q,
                                  double r, const Mat2& q_terminal,
                                  const TimeGrid& grid);

// Backward offset sweep carrying the price:
// -ds/dt = (A' - P B R^-1 B') s + P f + p e2 - Q r_x, s(T) = -Q_T r_x(T).
AdjointOffset integrate_offset(const RiccatiSolution& riccati,
                               const SystemMatrices& sys, const CostParams& cost,
                               const ScalarSignal& price, const TimeGrid& grid);

// Forward mean sweep under the optimal feedback:
// dm/dt = (A - B R^-1 B' P) m - B R^-1 B' s + f, m(0) = mean0.
Traj<Vec2> integrate_mean_forward(const RiccatiSolution& riccati,
                                  const AdjointOffset& offset,
                                  const SystemMatrices& sys, double r,
                                  const Vec2& mean0, const TimeGrid& grid);

// Backward scalar offset:
// -dphi/dt = -(1/2) s' B R^-1 B' s + s' f + (1/2) tr(Sigma Sigma' P)
//            + (1/2) r_x' Q r_x,  phi(T) = (1/2) r_x(T)' Q_T r_x(T).
Traj<double> compute_phi(const RiccatiSolution& riccati, const AdjointOffset& offset,
                         const SystemMatrices& sys, const CostParams& cost,
                         const TimeGrid& grid);

// u*(t, z) = -(1/r) (P(t) z + s(t))_2; trajectory queries between nodes are
// linear per the shared convention.
double feedback_control(const RiccatiSolution& riccati, const AdjointOffset& offset,
                        double t, const Vec2& z, double r);

double value_function(const RiccatiSolution& riccati, const AdjointOffset& offset,
                      const Traj<double>& phi, double t, const Vec2& z);

}  // namespace mfg

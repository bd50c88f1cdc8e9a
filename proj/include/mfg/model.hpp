#pragma once

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mfg/grid.hpp"

namespace mfg {

// ============================================================================
// Charging-fleet model primitives.
//
// Per-agent state is z = (z1, z2): z1 the state of charge in kWh, z2 the
// charging power in kW. The control is the ramp rate in kW/h. Dynamics are
//
//   dz = (A z + B u + f(t)) dt + Sigma dw,
//   A = [[0, kappa], [0, 0]],  B = [0, 1]^T,  f(t) = [-b(t), 0]^T,
//   Sigma = diag(sigma1, sigma2),
//
// with kappa the charging efficiency and b(t) an exogenous demand drain.
// ============================================================================

struct ModelParams {
  double kappa = 0.9;        // charging efficiency, in (0, 1)
  double sigma1 = 0.5;       // SOC noise intensity, kWh / sqrt(h)
  double sigma2 = 0.25;      // power noise intensity, kW / sqrt(h)
  double e_cap = 60.0;       // battery capacity, kWh; reporting metadata only
  std::vector<double> drain; // b(t) per grid node; empty means b == 0

  void validate(const TimeGrid& grid) const;
};

struct SystemMatrices {
  Mat2 a;
  Vec2 b;
  Mat2 sigma;
  Traj<double> drain;  // b(t), linear between nodes

  Vec2 f(double t) const { return Vec2(-drain.eval(t), 0.0); }
  // Outer product B R^-1 B^T for a given control weight.
  Mat2 control_outer(double r) const { return (b * b.transpose()) / r; }
};

SystemMatrices build_system(const ModelParams& params, const TimeGrid& grid);

// ----------------------------------------------------------------------------
// Tracking cost. Running term (1/2)(z - r_x)' Q (z - r_x) + p z2 + (1/2) R u^2,
// terminal term (1/2)(z(T) - r_x(T))' Q_T (z(T) - r_x(T)). The references are
// sampled per node with a separate explicit terminal reference.
// ----------------------------------------------------------------------------
struct CostParams {
  Mat2 q = Mat2::Zero();
  double r = 0.1;
  Mat2 q_terminal = Mat2::Zero();
  Traj<Vec2> x_ref;    // r_x(t)
  Vec2 x_ref_terminal = Vec2::Zero();
  Traj<double> g_ref;  // r_g(t), the grid reference the price deviation is measured from

  static CostParams constant_refs(const TimeGrid& grid, const Mat2& q, double r,
                                  const Mat2& q_terminal, const Vec2& x_ref,
                                  const Vec2& x_ref_terminal, double g_ref);

  void validate(const TimeGrid& grid) const;
};

// ----------------------------------------------------------------------------
// Price function alpha(d): unit price as a function of the demand deviation
// d = z2-mean minus r_g. Continuous, nondecreasing, finite on finite inputs.
// primitive() is Phi(d) = integral of alpha from 0 to d, the convex potential
// the variational solver minimizes through.
// ----------------------------------------------------------------------------
class PriceFunction {
 public:
  enum class Kind { Affine, Sigmoid, Table };

  // alpha(d) = c1 d + c0, c1 > 0.
  static PriceFunction affine(double c1, double c0);
  // alpha(d) = d_max / (1 + exp(-a d)), d_max > 0, a > 0.
  static PriceFunction sigmoid(double d_max, double a);
  // Piecewise-linear interpolation of (d_i, alpha_i) points, constant beyond
  // the ends; d_i strictly increasing, alpha_i nondecreasing.
  static PriceFunction tabulated(std::vector<std::pair<double, double>> points);

  double operator()(double d) const;  // alpha(d)
  double primitive(double d) const;   // Phi(d)

  Kind kind() const { return kind_; }
  // Affine coefficients; throws unless kind() == Affine.
  double affine_c1() const;
  double affine_c0() const;

 private:
  PriceFunction() = default;

  struct Affine {
    double c1, c0;
  };
  struct Sigmoid {
    double d_max, a;
  };
  struct Table {
    std::vector<double> d;
    std::vector<double> alpha;
    std::vector<double> cum;  // integral of alpha from d[0] to d[i]
    double at_zero;           // integral of alpha from d[0] to 0
    double value(double x) const;
    double anti(double x) const;  // integral from d[0] to x
  };

  Kind kind_ = Kind::Affine;
  std::variant<Affine, Sigmoid, Table> impl_{Affine{1.0, 0.0}};
};

}  // namespace mfg

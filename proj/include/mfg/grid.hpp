#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mfg/errors.hpp"

namespace mfg {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

namespace detail {

template <class T>
inline T zero_value() {
  if constexpr (std::is_arithmetic_v<T>) {
    return T(0);
  } else {
    return T::Zero();
  }
}

template <class T>
inline double sup_abs(const T& x) {
  if constexpr (std::is_arithmetic_v<T>) {
    return std::abs(static_cast<double>(x));
  } else {
    return x.cwiseAbs().maxCoeff();
  }
}

template <class T>
inline bool all_finite(const T& x) {
  if constexpr (std::is_arithmetic_v<T>) {
    return std::isfinite(static_cast<double>(x));
  } else {
    return x.allFinite();
  }
}

}  // namespace detail

// ============================================================================
// TimeGrid: the shared fixed-step grid on [0, T].
//
// All solver outputs live on this grid (one value per node). Integrators
// additionally keep values on the half grid (midpoints included) for accurate
// coefficient interpolation, but that is an internal detail; the public
// convention for querying a trajectory between nodes is linear interpolation.
// ============================================================================
class TimeGrid {
 public:
  TimeGrid() = default;

  TimeGrid(double horizon, double dt) : horizon_(horizon), dt_(dt) {
    if (!(std::isfinite(horizon) && horizon > 0.0)) {
      throw ConfigError("grid horizon must be finite and > 0");
    }
    if (!(std::isfinite(dt) && dt > 0.0)) {
      throw ConfigError("grid dt must be finite and > 0");
    }
    double ratio = horizon / dt;
    steps_ = static_cast<int>(std::llround(ratio));
    if (steps_ < 2 || std::abs(ratio - steps_) > 1e-6) {
      throw ConfigError("grid horizon must be an integer multiple (>= 2) of dt");
    }
  }

  double horizon() const { return horizon_; }
  double dt() const { return dt_; }
  int steps() const { return steps_; }
  int nodes() const { return steps_ + 1; }

  // Node times; the final node is exactly the horizon.
  double time(int k) const { return k == steps_ ? horizon_ : k * dt_; }

  // Half-grid points (spacing dt/2), used by the integrators.
  int half_points() const { return 2 * steps_ + 1; }
  double half_time(int j) const {
    return j == 2 * steps_ ? horizon_ : j * (0.5 * dt_);
  }

  bool same_as(const TimeGrid& o) const {
    return steps_ == o.steps_ && std::abs(horizon_ - o.horizon_) <= 1e-9 * horizon_;
  }

 private:
  double horizon_ = 0.0;
  double dt_ = 0.0;
  int steps_ = 0;
};

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b, const char* what) {
  if (!a.same_as(b)) {
    throw GridMismatchError(std::string(what) + ": time grids differ");
  }
}

// ============================================================================
// Traj<T>: a trajectory sampled on a TimeGrid.
//
// Node values are the public contract; eval() interpolates linearly between
// nodes. Trajectories produced by the integrators also carry half-grid values
// and derivatives, and stage() then evaluates a cubic Hermite interpolant.
// stage() falls back to linear interpolation for plain sampled data, which is
// exactly the declared convention for inputs like references and controls.
// ============================================================================
template <class T>
class Traj {
 public:
  Traj() = default;

  Traj(const TimeGrid& grid, std::vector<T> node_values)
      : grid_(grid), nodes_(std::move(node_values)) {
    if (static_cast<int>(nodes_.size()) != grid_.nodes()) {
      throw GridMismatchError("trajectory needs one value per grid node");
    }
  }

  static Traj constant(const TimeGrid& grid, const T& value) {
    return Traj(grid, std::vector<T>(grid.nodes(), value));
  }

  // Dense construction from half-grid values and derivatives (integrator output).
  static Traj dense(const TimeGrid& grid, std::vector<T> half_values,
                    std::vector<T> half_derivs) {
    if (static_cast<int>(half_values.size()) != grid.half_points() ||
        static_cast<int>(half_derivs.size()) != grid.half_points()) {
      throw GridMismatchError("dense trajectory needs one value per half-grid point");
    }
    Traj t;
    t.grid_ = grid;
    t.half_ = std::move(half_values);
    t.dhalf_ = std::move(half_derivs);
    t.nodes_.resize(grid.nodes());
    for (int k = 0; k < grid.nodes(); ++k) t.nodes_[k] = t.half_[2 * k];
    return t;
  }

  const TimeGrid& grid() const { return grid_; }
  int nodes() const { return static_cast<int>(nodes_.size()); }
  bool has_dense() const { return !half_.empty(); }

  const T& operator[](int k) const { return nodes_[k]; }
  const std::vector<T>& node_values() const { return nodes_; }

  const T& half_value(int j) const { return half_[j]; }
  const T& half_deriv(int j) const { return dhalf_[j]; }

  // Public convention: linear interpolation between nodes.
  T eval(double t) const {
    double dt = grid_.dt();
    double pos = clamp_time(t) / dt;
    int k = static_cast<int>(pos);
    if (k >= grid_.steps()) return nodes_.back();
    double th = pos - k;
    return (1.0 - th) * nodes_[k] + th * nodes_[k + 1];
  }

  // Integrator-internal query: cubic Hermite on the half grid when available.
  T stage(double t) const {
    if (half_.empty()) return eval(t);
    double h = 0.5 * grid_.dt();
    double pos = clamp_time(t) / h;
    int j = static_cast<int>(pos);
    if (j >= grid_.half_points() - 1) return half_.back();
    double th = pos - j;
    double th2 = th * th;
    double th3 = th2 * th;
    double h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
    double h10 = th3 - 2.0 * th2 + th;
    double h01 = -2.0 * th3 + 3.0 * th2;
    double h11 = th3 - th2;
    return h00 * half_[j] + (h10 * h) * dhalf_[j] + h01 * half_[j + 1] +
           (h11 * h) * dhalf_[j + 1];
  }

  T& mutable_node(int k) { return nodes_[k]; }

 private:
  double clamp_time(double t) const {
    if (t < 0.0) {
      if (t < -1e-9 * grid_.horizon()) throw GridMismatchError("time before grid start");
      return 0.0;
    }
    if (t > grid_.horizon()) {
      if (t > grid_.horizon() * (1.0 + 1e-9)) {
        throw GridMismatchError("time beyond grid horizon");
      }
      return grid_.horizon();
    }
    return t;
  }

  TimeGrid grid_;
  std::vector<T> nodes_;
  std::vector<T> half_;
  std::vector<T> dhalf_;
};

// Sup over nodes of the componentwise absolute difference.
template <class T>
inline double sup_node_diff(const Traj<T>& a, const Traj<T>& b) {
  require_same_grid(a.grid(), b.grid(), "sup_node_diff");
  double sup = 0.0;
  for (int k = 0; k < a.nodes(); ++k) {
    T d = a[k] - b[k];
    sup = std::max(sup, detail::sup_abs(d));
  }
  return sup;
}

// Trapezoidal quadrature of node samples.
inline double trapezoid(const TimeGrid& g, const std::vector<double>& f) {
  double acc = 0.5 * (f.front() + f.back());
  for (int k = 1; k < g.steps(); ++k) acc += f[k];
  return acc * g.dt();
}

inline double trapezoid_weight(const TimeGrid& g, int k) {
  return (k == 0 || k == g.steps()) ? 0.5 * g.dt() : g.dt();
}

}  // namespace mfg

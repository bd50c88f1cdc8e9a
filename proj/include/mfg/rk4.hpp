#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mfg/grid.hpp"

namespace mfg::detail {

// Norm guard shared by all integrations. Anything past this is treated as a
// blow-up rather than left to overflow into inf/nan.
inline constexpr double kBlowUpNorm = 1e12;

struct IdentityPost {
  template <class T>
  T operator()(T y) const {
    return y;
  }
};

// Classical RK4 over the shared grid, two half-steps per grid interval.
// Records the state and its RHS derivative at every half-grid point, so the
// result supports 4th-order-accurate Hermite queries at later stage times.
// `post` is applied after every step (e.g. symmetrization); `what` labels
// blow-up diagnostics.
template <class T, class RHS, class Post = IdentityPost>
Traj<T> rk4_path(const TimeGrid& g, const T& boundary, bool forward, RHS&& rhs,
                 const char* what, Post&& post = Post{}) {
  const int n = g.half_points();
  const double h = forward ? 0.5 * g.dt() : -0.5 * g.dt();
  std::vector<T> vals(n, zero_value<T>());
  std::vector<T> derivs(n, zero_value<T>());

  int j = forward ? 0 : n - 1;
  const int last = forward ? n - 1 : 0;
  const int dir = forward ? 1 : -1;

  T y = boundary;
  vals[j] = y;
  derivs[j] = rhs(g.half_time(j), y);
  while (j != last) {
    const double t = g.half_time(j);
    const T& k1 = derivs[j];
    T k2 = rhs(t + 0.5 * h, y + (0.5 * h) * k1);
    T k3 = rhs(t + 0.5 * h, y + (0.5 * h) * k2);
    T k4 = rhs(t + h, y + h * k3);
    y = post(y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    if (!all_finite(y) || sup_abs(y) > kBlowUpNorm) {
      throw IntegrationError(std::string(what) +
                             ": integration diverged (norm guard 1e12 tripped)");
    }
    j += dir;
    vals[j] = y;
    derivs[j] = rhs(g.half_time(j), y);
  }
  return Traj<T>::dense(g, std::move(vals), std::move(derivs));
}

}  // namespace mfg::detail

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "mfg/grid.hpp"

using namespace mfg;

TEST_SUITE("grid") {

TEST_CASE("time grid layout") {
  TimeGrid g(8.0, 0.005);
  CHECK(g.steps() == 1600);
  CHECK(g.nodes() == 1601);
  CHECK(g.horizon() == 8.0);
  CHECK(g.dt() == 0.005);
  CHECK(g.time(0) == 0.0);
  CHECK(g.time(200) == doctest::Approx(1.0).epsilon(1e-15));
  // The final node is the horizon exactly, not steps * dt rounding.
  CHECK(g.time(g.steps()) == 8.0);

  TimeGrid h(1.0, 0.1);
  CHECK(h.steps() == 10);
  CHECK(h.time(10) == 1.0);
}

TEST_CASE("time grid validation") {
  CHECK_THROWS_AS(TimeGrid(0.0, 0.1), ConfigError);
  CHECK_THROWS_AS(TimeGrid(-1.0, 0.1), ConfigError);
  CHECK_THROWS_AS(TimeGrid(1.0, 0.0), ConfigError);
  CHECK_THROWS_AS(TimeGrid(1.0, -0.5), ConfigError);
  // horizon must be an integer multiple of dt ...
  CHECK_THROWS_AS(TimeGrid(1.0, 0.3), ConfigError);
  // ... with at least two steps.
  CHECK_THROWS_AS(TimeGrid(1.0, 1.0), ConfigError);
  CHECK_NOTHROW(TimeGrid(1.0, 0.5));
}

TEST_CASE("half grid") {
  TimeGrid g(2.0, 0.25);
  CHECK(g.half_points() == 2 * g.steps() + 1);
  for (int k = 0; k <= g.steps(); ++k) {
    CHECK(g.half_time(2 * k) == doctest::Approx(g.time(k)).epsilon(1e-15));
  }
  CHECK(g.half_time(g.half_points() - 1) == g.horizon());
  CHECK(g.half_time(1) == doctest::Approx(0.125));
}

TEST_CASE("grid identity") {
  TimeGrid a(2.0, 0.1), b(2.0, 0.1), c(2.0, 0.05), d(4.0, 0.2);
  CHECK(a.same_as(b));
  CHECK_FALSE(a.same_as(c));
  CHECK_FALSE(a.same_as(d));
  CHECK_NOTHROW(require_same_grid(a, b, "test"));
  CHECK_THROWS_AS(require_same_grid(a, c, "test"), GridMismatchError);
}

TEST_CASE("trajectory node contract") {
  TimeGrid g(1.0, 0.25);
  std::vector<double> vals = {1.0, 2.0, 4.0, 8.0, 16.0};
  Traj<double> tr(g, vals);
  CHECK(tr.nodes() == 5);
  CHECK_FALSE(tr.has_dense());
  CHECK(tr[0] == 1.0);
  CHECK(tr[4] == 16.0);
  CHECK(tr.node_values() == vals);

  // One value per node, enforced.
  CHECK_THROWS_AS(Traj<double>(g, std::vector<double>(4, 0.0)), GridMismatchError);
  CHECK_THROWS_AS(Traj<double>(g, std::vector<double>(6, 0.0)), GridMismatchError);

  Traj<double> cst = Traj<double>::constant(g, 7.5);
  for (int k = 0; k < cst.nodes(); ++k) CHECK(cst[k] == 7.5);
}

TEST_CASE("linear evaluation and time clamping") {
  TimeGrid g(1.0, 0.25);
  Traj<double> tr(g, {1.0, 2.0, 4.0, 8.0, 16.0});
  CHECK(tr.eval(0.0) == 1.0);
  CHECK(tr.eval(0.25) == 2.0);
  CHECK(tr.eval(1.0) == 16.0);
  CHECK(tr.eval(0.125) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(tr.eval(0.625) == doctest::Approx(6.0).epsilon(1e-15));

  // Tiny excursions outside [0, T] clamp; real ones throw.
  CHECK(tr.eval(-1e-12) == 1.0);
  CHECK(tr.eval(1.0 + 1e-12) == 16.0);
  CHECK_THROWS_AS(tr.eval(-0.01), GridMismatchError);
  CHECK_THROWS_AS(tr.eval(1.01), GridMismatchError);
}

TEST_CASE("dense trajectories use cubic stage interpolation") {
  TimeGrid g(2.0, 0.25);
  auto q = [](double t) { return 2.0 * t * t * t - t * t + 3.0 * t - 5.0; };
  auto dq = [](double t) { return 6.0 * t * t - 2.0 * t + 3.0; };
  std::vector<double> hv(g.half_points()), hd(g.half_points());
  for (int j = 0; j < g.half_points(); ++j) {
    hv[j] = q(g.half_time(j));
    hd[j] = dq(g.half_time(j));
  }
  Traj<double> tr = Traj<double>::dense(g, hv, hd);
  CHECK(tr.has_dense());
  for (int k = 0; k <= g.steps(); ++k) {
    CHECK(tr[k] == hv[2 * k]);
    CHECK(tr.half_value(2 * k) == hv[2 * k]);
  }

  // Cubic Hermite on the half grid reproduces a cubic exactly; eval() stays
  // linear by the public convention.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> td(0.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    double t = td(rng);
    CHECK(tr.stage(t) == doctest::Approx(q(t)).epsilon(1e-12));
  }
  CHECK(tr.eval(0.125) == doctest::Approx(0.5 * (q(0.0) + q(0.25))).epsilon(1e-13));

  // Node-only data: stage falls back to the linear convention.
  Traj<double> lin(g, tr.node_values());
  CHECK(lin.stage(0.125) == doctest::Approx(lin.eval(0.125)).epsilon(1e-15));
}

TEST_CASE("vector trajectories and sup differences") {
  TimeGrid g(1.0, 0.5);
  Traj<Vec2> a(g, {Vec2(1.0, 2.0), Vec2(3.0, 4.0), Vec2(5.0, 6.0)});
  Traj<Vec2> b(g, {Vec2(1.0, 2.5), Vec2(3.0, 4.0), Vec2(5.0, 5.0)});
  CHECK(sup_node_diff(a, b) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sup_node_diff(a, a) == 0.0);
  CHECK(a.eval(0.25)(0) == doctest::Approx(2.0));

  TimeGrid other(1.0, 0.25);
  Traj<Vec2> c = Traj<Vec2>::constant(other, Vec2::Zero());
  CHECK_THROWS_AS(sup_node_diff(a, c), GridMismatchError);
}

TEST_CASE("trapezoid quadrature") {
  TimeGrid g(2.0, 0.125);
  // Exact for linear integrands.
  std::vector<double> f(g.nodes());
  for (int k = 0; k < g.nodes(); ++k) f[k] = 3.0 * g.time(k) + 1.0;
  CHECK(trapezoid(g, f) == doctest::Approx(8.0).epsilon(1e-14));

  double wsum = 0.0;
  for (int k = 0; k <= g.steps(); ++k) wsum += trapezoid_weight(g, k);
  CHECK(wsum == doctest::Approx(g.horizon()).epsilon(1e-14));
  CHECK(trapezoid_weight(g, 0) == doctest::Approx(0.5 * g.dt()));
  CHECK(trapezoid_weight(g, 1) == doctest::Approx(g.dt()));
  CHECK(trapezoid_weight(g, g.steps()) == doctest::Approx(0.5 * g.dt()));
}

}  // TEST_SUITE("grid")

#include "mfg/model.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace mfg {

namespace {

constexpr double kLn2 = 0.6931471805599453;

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw ConfigError(std::string(what) + " must be finite");
}

void require_psd(const Mat2& m, const char* what) {
  if (std::abs(m(0, 1) - m(1, 0)) > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) {
    throw ConfigError(std::string(what) + " must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat2> es(m);
  if (es.eigenvalues().minCoeff() < -1e-10 * (1.0 + m.cwiseAbs().maxCoeff())) {
    throw ConfigError(std::string(what) + " must be positive semidefinite");
  }
}

}  // namespace

void ModelParams::validate(const TimeGrid& grid) const {
  if (!(std::isfinite(kappa) && kappa > 0.0 && kappa < 1.0)) {
    throw ConfigError("model.kappa must lie in (0, 1)");
  }
  if (!(std::isfinite(sigma1) && sigma1 >= 0.0)) {
    throw ConfigError("model.sigma1 must be >= 0");
  }
  if (!(std::isfinite(sigma2) && sigma2 >= 0.0)) {
    throw ConfigError("model.sigma2 must be >= 0");
  }
  if (!(std::isfinite(e_cap) && e_cap > 0.0)) {
    throw ConfigError("model.e_cap must be > 0");
  }
  if (!drain.empty()) {
    if (static_cast<int>(drain.size()) != grid.nodes()) {
      throw ConfigError("model drain table needs one value per grid node");
    }
    for (double v : drain) {
      require_finite(v, "model drain value");
      if (v < 0.0) throw ConfigError("model drain values must be >= 0");
    }
  }
}

SystemMatrices build_system(const ModelParams& params, const TimeGrid& grid) {
  params.validate(grid);
  SystemMatrices sys;
  sys.a << 0.0, params.kappa, 0.0, 0.0;
  sys.b << 0.0, 1.0;
  sys.sigma = Vec2(params.sigma1, params.sigma2).asDiagonal();
  sys.drain = params.drain.empty() ? Traj<double>::constant(grid, 0.0)
                                   : Traj<double>(grid, params.drain);
  return sys;
}

CostParams CostParams::constant_refs(const TimeGrid& grid, const Mat2& q, double r,
                                     const Mat2& q_terminal, const Vec2& x_ref,
                                     const Vec2& x_ref_terminal, double g_ref) {
  CostParams c;
  c.q = q;
  c.r = r;
  c.q_terminal = q_terminal;
  c.x_ref = Traj<Vec2>::constant(grid, x_ref);
  c.x_ref_terminal = x_ref_terminal;
  c.g_ref = Traj<double>::constant(grid, g_ref);
  c.validate(grid);
  return c;
}

void CostParams::validate(const TimeGrid& grid) const {
  require_psd(q, "cost.q");
  require_psd(q_terminal, "cost.q_t");
  if (!(std::isfinite(r) && r > 0.0)) throw ConfigError("cost.r must be > 0");
  require_same_grid(x_ref.grid(), grid, "cost.r_x");
  require_same_grid(g_ref.grid(), grid, "cost.r_g");
  for (int k = 0; k < grid.nodes(); ++k) {
    if (!x_ref[k].allFinite()) throw ConfigError("cost.r_x values must be finite");
    require_finite(g_ref[k], "cost.r_g value");
  }
  if (!x_ref_terminal.allFinite()) {
    throw ConfigError("cost.r_x_terminal must be finite");
  }
}

// ----------------------------------------------------------------------------
// PriceFunction
// ----------------------------------------------------------------------------

PriceFunction PriceFunction::affine(double c1, double c0) {
  require_finite(c1, "price.c1");
  require_finite(c0, "price.c0");
  if (!(c1 > 0.0)) {
    throw ConfigError("price.c1 must be > 0 (strictly increasing affine price)");
  }
  PriceFunction p;
  p.kind_ = Kind::Affine;
  p.impl_ = Affine{c1, c0};
  return p;
}

PriceFunction PriceFunction::sigmoid(double d_max, double a) {
  require_finite(d_max, "price.d_max");
  require_finite(a, "price.a");
  if (!(d_max > 0.0)) throw ConfigError("price.d_max must be > 0");
  if (!(a > 0.0)) throw ConfigError("price.a must be > 0");
  PriceFunction p;
  p.kind_ = Kind::Sigmoid;
  p.impl_ = Sigmoid{d_max, a};
  return p;
}

PriceFunction PriceFunction::tabulated(std::vector<std::pair<double, double>> points) {
  if (points.size() < 2) {
    throw ConfigError("price table needs at least two (d, alpha) points");
  }
  Table t;
  t.d.reserve(points.size());
  t.alpha.reserve(points.size());
  for (const auto& [d, a] : points) {
    require_finite(d, "price table d");
    require_finite(a, "price table alpha");
    if (!t.d.empty()) {
      if (!(d > t.d.back())) throw ConfigError("price table d must be strictly increasing");
      if (a < t.alpha.back()) throw ConfigError("price table alpha must be nondecreasing");
    }
    t.d.push_back(d);
    t.alpha.push_back(a);
  }
  t.cum.resize(t.d.size(), 0.0);
  for (std::size_t i = 1; i < t.d.size(); ++i) {
    t.cum[i] = t.cum[i - 1] + 0.5 * (t.alpha[i] + t.alpha[i - 1]) * (t.d[i] - t.d[i - 1]);
  }
  t.at_zero = t.anti(0.0);
  PriceFunction p;
  p.kind_ = Kind::Table;
  p.impl_ = std::move(t);
  return p;
}

double PriceFunction::Table::value(double x) const {
  if (x <= d.front()) return alpha.front();
  if (x >= d.back()) return alpha.back();
  auto it = std::upper_bound(d.begin(), d.end(), x);
  std::size_t i = static_cast<std::size_t>(it - d.begin()) - 1;
  double th = (x - d[i]) / (d[i + 1] - d[i]);
  return (1.0 - th) * alpha[i] + th * alpha[i + 1];
}

double PriceFunction::Table::anti(double x) const {
  if (x <= d.front()) return alpha.front() * (x - d.front());
  if (x >= d.back()) return cum.back() + alpha.back() * (x - d.back());
  auto it = std::upper_bound(d.begin(), d.end(), x);
  std::size_t i = static_cast<std::size_t>(it - d.begin()) - 1;
  double w = x - d[i];
  double ax = value(x);
  return cum[i] + 0.5 * (alpha[i] + ax) * w;
}

double PriceFunction::operator()(double d) const {
  if (!std::isfinite(d)) throw Error("price deviation must be finite");
  switch (kind_) {
    case Kind::Affine: {
      const auto& a = std::get<Affine>(impl_);
      return a.c1 * d + a.c0;
    }
    case Kind::Sigmoid: {
      const auto& s = std::get<Sigmoid>(impl_);
      return s.d_max / (1.0 + std::exp(-s.a * d));
    }
    case Kind::Table:
      return std::get<Table>(impl_).value(d);
  }
  throw Error("unreachable price kind");
}

double PriceFunction::primitive(double d) const {
  if (!std::isfinite(d)) throw Error("price deviation must be finite");
  switch (kind_) {
    case Kind::Affine: {
      const auto& a = std::get<Affine>(impl_);
      return 0.5 * a.c1 * d * d + a.c0 * d;
    }
    case Kind::Sigmoid: {
      // Phi(d) = (d_max / a) (log(1 + e^{a d}) - log 2). The closed form is
      // used up to a*d = 30; past that the linear asymptote is exact to below
      // double precision and avoids overflow. For very negative a*d the exp
      // underflows harmlessly to the limit constant.
      const auto& s = std::get<Sigmoid>(impl_);
      double x = s.a * d;
      if (x > 30.0) return s.d_max * d - (s.d_max / s.a) * kLn2;
      return (s.d_max / s.a) * (std::log1p(std::exp(x)) - kLn2);
    }
    case Kind::Table: {
      const auto& t = std::get<Table>(impl_);
      return t.anti(d) - t.at_zero;
    }
  }
  throw Error("unreachable price kind");
}

double PriceFunction::affine_c1() const {
  if (kind_ != Kind::Affine) throw Error("price function is not affine");
  return std::get<Affine>(impl_).c1;
}

double PriceFunction::affine_c0() const {
  if (kind_ != Kind::Affine) throw Error("price function is not affine");
  return std::get<Affine>(impl_).c0;
}

}  // namespace mfg

#include "mfg/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <climits>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mfg/csvio.hpp"
#include "mfg/errors.hpp"

namespace mfg {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

double parse_double(const std::string& value, const std::string& key) {
  const std::string v = trim(value);
  double out = 0.0;
  const char* first = v.data();
  const char* last = v.data() + v.size();
  auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc{} || res.ptr != last)
    throw ConfigError("config value for " + key + " is not a number: '" + value + "'");
  if (!std::isfinite(out))
    throw ConfigError("config value for " + key + " must be finite");
  return out;
}

long long parse_ll(const std::string& value, const std::string& key) {
  const std::string v = trim(value);
  long long out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("config value for " + key + " is not an integer: '" + value + "'");
  return out;
}

int parse_int(const std::string& value, const std::string& key) {
  const long long v = parse_ll(value, key);
  if (v < INT_MIN || v > INT_MAX)
    throw ConfigError("config value for " + key + " is out of range: '" + value + "'");
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
  const std::string v = trim(value);
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("config value for " + key +
                      " is not a nonnegative integer: '" + value + "'");
  return out;
}

bool parse_bool(const std::string& value, const std::string& key) {
  const std::string v = lower(trim(value));
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError("config value for " + key + " is not a boolean: '" + value + "'");
}

std::vector<double> parse_numbers(const std::string& value, const std::string& key) {
  std::vector<double> out;
  std::string token;
  for (char c : value) {
    if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) {
        out.push_back(parse_double(token, key));
        token.clear();
      }
    } else {
      token.push_back(c);
    }
  }
  if (!token.empty()) out.push_back(parse_double(token, key));
  return out;
}

Vec2 parse_vec2(const std::string& value, const std::string& key) {
  const auto v = parse_numbers(value, key);
  if (v.size() != 2)
    throw ConfigError("config value for " + key + " must have exactly 2 numbers, got " +
                      std::to_string(v.size()));
  return Vec2(v[0], v[1]);
}

Mat2 parse_sym2(const std::string& value, const std::string& key) {
  const auto v = parse_numbers(value, key);
  Mat2 m;
  if (v.size() == 2) {
    m << v[0], 0.0, 0.0, v[1];
  } else if (v.size() == 3) {
    m << v[0], v[1], v[1], v[2];
  } else if (v.size() == 4) {
    const double scale = std::max({1.0, std::abs(v[1]), std::abs(v[2])});
    if (std::abs(v[1] - v[2]) > 1e-12 * scale)
      throw ConfigError("config value for " + key +
                        " must be a symmetric matrix (off-diagonals differ)");
    const double off = 0.5 * (v[1] + v[2]);
    m << v[0], off, off, v[3];
  } else {
    throw ConfigError("config value for " + key +
                      " must have 2 (diagonal), 3 (symmetric) or 4 (full) numbers, got " +
                      std::to_string(v.size()));
  }
  return m;
}

void require_known_section(const std::string& section) {
  static const char* kSections[] = {"grid", "model", "cost", "price", "solve", "sim"};
  for (const char* s : kSections)
    if (section == s) return;
  throw ConfigError("unknown config section: [" + section + "]");
}

void set_key(RunConfig& cfg, const std::string& sec, const std::string& key,
             const std::string& value) {
  const std::string q = sec + "." + key;
  if (sec == "grid") {
    if (key == "T") cfg.horizon = parse_double(value, q);
    else if (key == "dt") cfg.dt = parse_double(value, q);
    else throw ConfigError("unknown config key: " + q);
  } else if (sec == "model") {
    if (key == "kappa") cfg.kappa = parse_double(value, q);
    else if (key == "sigma1") cfg.sigma1 = parse_double(value, q);
    else if (key == "sigma2") cfg.sigma2 = parse_double(value, q);
    else if (key == "e_cap") cfg.e_cap = parse_double(value, q);
    else if (key == "b_table") cfg.b_table = trim(value);
    else throw ConfigError("unknown config key: " + q);
  } else if (sec == "cost") {
    if (key == "q") cfg.q = parse_sym2(value, q);
    else if (key == "r") cfg.r = parse_double(value, q);
    else if (key == "q_terminal") cfg.q_terminal = parse_sym2(value, q);
    else if (key == "x_ref") cfg.x_ref = parse_vec2(value, q);
    else if (key == "x_ref_terminal") cfg.x_ref_terminal = parse_vec2(value, q);
    else if (key == "g_ref") cfg.g_ref = parse_double(value, q);
    else throw ConfigError("unknown config key: " + q);
  } else if (sec == "price") {
    if (key == "kind") cfg.price_kind = lower(trim(value));
    else if (key == "c1") cfg.c1 = parse_double(value, q);
    else if (key == "c0") cfg.c0 = parse_double(value, q);
    else if (key == "d_max") cfg.d_max = parse_double(value, q);
    else if (key == "a") cfg.a = parse_double(value, q);
    else if (key == "table") cfg.price_table = trim(value);
    else throw ConfigError("unknown config key: " + q);
  } else if (sec == "solve") {
    if (key == "solver") cfg.solver = lower(trim(value));
    else if (key == "tol") {
      const double t = parse_double(value, q);
      cfg.tol = t < 0.0 ? -1.0 : t;  // any negative value means "solver default"
    } else if (key == "max_iter") cfg.max_iter = parse_int(value, q);
    else if (key == "damping") cfg.damping = parse_double(value, q);
    else throw ConfigError("unknown config key: " + q);
  } else if (sec == "sim") {
    if (key == "N") cfg.n_agents = parse_int(value, q);
    else if (key == "seed") cfg.seed = parse_u64(value, q);
    else if (key == "soc_lo") cfg.soc_lo = parse_double(value, q);
    else if (key == "soc_hi") cfg.soc_hi = parse_double(value, q);
    else if (key == "baseline") cfg.baseline = parse_bool(value, q);
    else throw ConfigError("unknown config key: " + q);
  } else {
    throw ConfigError("unknown config section: [" + sec + "]");
  }
}

// Two-column numeric reader; tolerates one leading header row.
std::vector<std::pair<double, double>> read_two_column(const std::string& path,
                                                       const std::string& what) {
  std::ifstream in(path);
  if (!in) throw DataError(what + ": cannot open " + path);
  std::vector<std::pair<double, double>> rows;
  std::string line;
  int lineno = 0;
  bool seen_data = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    std::vector<double> fields;
    try {
      fields = parse_numbers(s, what);
      if (fields.size() != 2)
        throw ConfigError(what + ": line " + std::to_string(lineno) +
                          " must have two columns, got " +
                          std::to_string(fields.size()));
    } catch (const ConfigError& err) {
      if (!seen_data && rows.empty()) continue;  // header row
      throw DataError(std::string(err.what()) + " [" + path + ":" +
                      std::to_string(lineno) + "]");
    }
    rows.emplace_back(fields[0], fields[1]);
    seen_data = true;
  }
  if (rows.empty()) throw DataError(what + ": no data rows in " + path);
  return rows;
}

double interp_rows(const std::vector<std::pair<double, double>>& rows, double t) {
  if (t <= rows.front().first) return rows.front().second;
  if (t >= rows.back().first) return rows.back().second;
  auto it = std::upper_bound(rows.begin(), rows.end(), t,
                             [](double v, const auto& r) { return v < r.first; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double w = (t - lo.first) / (hi.first - lo.first);
  return lo.second + w * (hi.second - lo.second);
}

}  // namespace

TimeGrid RunConfig::make_grid() const { return TimeGrid(horizon, dt); }

SystemMatrices RunConfig::make_system(const TimeGrid& grid) const {
  ModelParams params;
  params.kappa = kappa;
  params.sigma1 = sigma1;
  params.sigma2 = sigma2;
  params.e_cap = e_cap;
  if (!b_table.empty()) params.drain = load_drain_table(b_table, grid);
  return build_system(params, grid);
}

CostParams RunConfig::make_cost(const TimeGrid& grid) const {
  CostParams cost = CostParams::constant_refs(grid, q, r, q_terminal, x_ref,
                                              x_ref_terminal, g_ref);
  cost.validate(grid);
  return cost;
}

PriceFunction RunConfig::make_price() const {
  if (price_kind == "affine") return PriceFunction::affine(c1, c0);
  if (price_kind == "sigmoid") return PriceFunction::sigmoid(d_max, a);
  if (price_kind == "table") {
    if (price_table.empty())
      throw ConfigError("price.kind = table requires price.table to name a CSV file");
    return PriceFunction::tabulated(load_price_table(price_table));
  }
  throw ConfigError("price.kind must be one of affine|sigmoid|table (got '" +
                    price_kind + "')");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      require_known_section(section);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value, got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key +
                        "' appears before any [section]");
    set_key(cfg, section, key, value);
  }
  return cfg;
}

RunConfig read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like section.key=value (got '" + spec + "')");
  const std::string path = trim(spec.substr(0, eq));
  const std::string value = trim(spec.substr(eq + 1));
  const auto dot = path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size())
    throw ConfigError("override must look like section.key=value (got '" + spec + "')");
  const std::string section = trim(path.substr(0, dot));
  const std::string key = trim(path.substr(dot + 1));
  require_known_section(section);
  set_key(cfg, section, key, value);
}

std::string serialize_config(const RunConfig& c) {
  const auto fd = [](double v) { return format_double(v); };
  const auto sym = [&](const Mat2& m) {
    return fd(m(0, 0)) + " " + fd(m(0, 1)) + " " + fd(m(1, 1));
  };
  const auto vec = [&](const Vec2& v) { return fd(v(0)) + " " + fd(v(1)); };
  std::ostringstream out;
  out << "[grid]\n";
  out << "T = " << fd(c.horizon) << "\n";
  out << "dt = " << fd(c.dt) << "\n\n";
  out << "[model]\n";
  out << "kappa = " << fd(c.kappa) << "\n";
  out << "sigma1 = " << fd(c.sigma1) << "\n";
  out << "sigma2 = " << fd(c.sigma2) << "\n";
  out << "e_cap = " << fd(c.e_cap) << "\n";
  if (!c.b_table.empty()) out << "b_table = " << c.b_table << "\n";
  out << "\n[cost]\n";
  out << "q = " << sym(c.q) << "\n";
  out << "r = " << fd(c.r) << "\n";
  out << "q_terminal = " << sym(c.q_terminal) << "\n";
  out << "x_ref = " << vec(c.x_ref) << "\n";
  out << "x_ref_terminal = " << vec(c.x_ref_terminal) << "\n";
  out << "g_ref = " << fd(c.g_ref) << "\n";
  out << "\n[price]\n";
  out << "kind = " << c.price_kind << "\n";
  out << "c1 = " << fd(c.c1) << "\n";
  out << "c0 = " << fd(c.c0) << "\n";
  out << "d_max = " << fd(c.d_max) << "\n";
  out << "a = " << fd(c.a) << "\n";
  if (!c.price_table.empty()) out << "table = " << c.price_table << "\n";
  out << "\n[solve]\n";
  out << "solver = " << c.solver << "\n";
  if (c.tol >= 0.0) out << "tol = " << fd(c.tol) << "\n";
  out << "max_iter = " << c.max_iter << "\n";
  out << "damping = " << fd(c.damping) << "\n";
  out << "\n[sim]\n";
  out << "N = " << c.n_agents << "\n";
  out << "seed = " << c.seed << "\n";
  out << "soc_lo = " << fd(c.soc_lo) << "\n";
  out << "soc_hi = " << fd(c.soc_hi) << "\n";
  out << "baseline = " << (c.baseline ? "true" : "false") << "\n";
  return out.str();
}

std::vector<double> load_drain_table(const std::string& path, const TimeGrid& grid) {
  const auto rows = read_two_column(path, "drain table");
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i].first > rows[i - 1].first))
      throw DataError("drain table: time column must be strictly increasing [" +
                      path + "]");
  std::vector<double> values(static_cast<std::size_t>(grid.steps()) + 1);
  for (int k = 0; k <= grid.steps(); ++k)
    values[static_cast<std::size_t>(k)] = interp_rows(rows, grid.time(k));
  return values;
}

std::vector<std::pair<double, double>> load_price_table(const std::string& path) {
  return read_two_column(path, "price table");
}

}  // namespace mfg

#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace kwt {

struct grid_spec {
  double x_min = 1e-4;
  double x_max = 1e4;
  std::size_t n = 256;

  void validate() const {
    if (!(x_min > 0.0) || !std::isfinite(x_max) || !(x_min < x_max))
      throw parameter_error("grid: need 0 < x_min < x_max");
    if (n < 16) throw parameter_error("grid: n_points must be >= 16");
  }
  double h() const { return std::log(x_max / x_min) / static_cast<double>(n - 1); }
  double t0() const { return std::log(x_min); }
  double node(std::size_t i) const {
    if (i == 0) return x_min;
    if (i + 1 == n) return x_max;
    return x_min * std::pow(x_max / x_min, static_cast<double>(i) / static_cast<double>(n - 1));
  }
  std::vector<double> nodes() const {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = node(i);
    return x;
  }
  // trapezoid weights of dx = x dt on the log grid
  std::vector<double> weights() const {
    std::vector<double> w(n);
    const double hh = h();
    for (std::size_t i = 0; i < n; ++i) w[i] = hh * node(i);
    w.front() *= 0.5;
    w.back() *= 0.5;
    return w;
  }
  bool operator==(const grid_spec& o) const { return x_min == o.x_min && x_max == o.x_max && n == o.n; }
};

struct grid_measure {
  grid_spec grid;
  std::vector<double> density;
  double atom = 0.0;

  grid_measure() = default;
  grid_measure(grid_spec g, std::vector<double> d, double a = 0.0) : grid(g), density(std::move(d)), atom(a) {
    validate();
  }

  template <class F>
  static grid_measure from_function(const grid_spec& g, F&& f, double a = 0.0) {
    g.validate();
    std::vector<double> d(g.n);
    for (std::size_t i = 0; i < g.n; ++i) d[i] = f(g.node(i));
    return grid_measure(g, std::move(d), a);
  }
  static grid_measure zero(const grid_spec& g) { return grid_measure(g, std::vector<double>(g.n, 0.0)); }

  void validate() const {
    grid.validate();
    if (density.size() != grid.n) throw parameter_error("grid_measure: density size does not match grid");
    for (std::size_t i = 0; i < density.size(); ++i)
      if (!(density[i] >= 0.0) || !std::isfinite(density[i]))
        throw domain_error("grid_measure: density must be finite and nonnegative (node " + std::to_string(i) + ")");
    if (!(atom >= 0.0) || !std::isfinite(atom)) throw domain_error("grid_measure: atom must be finite and nonnegative");
  }

  std::size_t size() const { return density.size(); }
  double x(std::size_t i) const { return grid.node(i); }

  // Density between nodes: linear in log-log where both neighbours are positive,
  // linear otherwise; zero outside the grid.
  double at(double z) const {
    if (!(z >= grid.x_min) || !(z <= grid.x_max)) return 0.0;
    const double s = (std::log(z) - grid.t0()) / grid.h();
    std::size_t k = static_cast<std::size_t>(std::max(0.0, std::floor(s)));
    if (k >= grid.n - 1) k = grid.n - 2;
    const double f = s - static_cast<double>(k);
    const double a = density[k], b = density[k + 1];
    if (a > 0.0 && b > 0.0) return a * std::pow(b / a, f);
    return a + f * (b - a);
  }
};

namespace detail {
inline std::string node_msg(const grid_measure& mu, std::size_t i) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "node %zu (x=%.6g)", i, mu.x(i));
  return buf;
}
}  // namespace detail

template <class W>
double quadrature(const grid_measure& mu, W&& weight) {
  const auto w = mu.grid.weights();
  std::vector<double> terms(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double v = weight(mu.x(i));
    if (!std::isfinite(v)) throw compute_error("quadrature: non-finite weight at " + detail::node_msg(mu, i));
    terms[i] = w[i] * mu.density[i] * v;
  }
  double s = pairwise_sum(terms);
  if (mu.atom > 0.0) {
    const double v0 = weight(0.0);
    if (!std::isfinite(v0)) throw compute_error("quadrature: non-finite weight at x=0 with a positive atom");
    s += mu.atom * v0;
  }
  return s;
}

inline double total_mass(const grid_measure& mu) {
  return quadrature(mu, [](double) { return 1.0; });
}

// Integral of density*f over (a,b) restricted to the grid; cells cut by a or b
// are handled by linear interpolation of the integrand in ln x.
template <class F>
double partial_integral(const grid_measure& mu, F&& f, double a, double b) {
  const auto& g = mu.grid;
  a = std::max(a, g.x_min);
  b = std::min(b, g.x_max);
  if (!(b > a)) return 0.0;
  const double h = g.h(), ta = std::log(a), tb = std::log(b);
  std::vector<double> terms;
  terms.reserve(mu.size());
  auto integrand = [&](std::size_t i) { return mu.x(i) * mu.density[i] * f(mu.x(i)); };
  for (std::size_t k = 0; k + 1 < mu.size(); ++k) {
    const double tl = g.t0() + h * static_cast<double>(k), tr = tl + h;
    const double lo = std::max(tl, ta), hi = std::min(tr, tb);
    if (!(hi > lo)) continue;
    const double fl = integrand(k), fr = integrand(k + 1);
    if (lo == tl && hi == tr) {
      terms.push_back(0.5 * h * (fl + fr));
    } else {
      const double sl = (lo - tl) / h, sr = (hi - tl) / h;
      const double vl = fl + sl * (fr - fl), vr = fl + sr * (fr - fl);
      terms.push_back(0.5 * (hi - lo) * (vl + vr));
    }
  }
  return pairwise_sum(terms);
}

struct rho_norm_result {
  double value = 0.0;
  double argmax_R = 1.0;
};

inline void check_rho(double rho) {
  if (!(rho > 1.0 && rho <= 2.0)) throw parameter_error("rho must lie in (1,2]");
}

// Log-spaced R candidates over [x_min/10, 10 x_max], endpoints exact.
inline std::vector<double> r_candidates(const grid_spec& g, int per_decade = 4) {
  const double lo = g.x_min / 10.0, hi = g.x_max * 10.0;
  const int m = std::max(1, static_cast<int>(std::ceil(std::log10(hi / lo) * per_decade - 1e-9)));
  std::vector<double> r(m + 1);
  for (int k = 0; k <= m; ++k) r[k] = lo * std::pow(hi / lo, static_cast<double>(k) / m);
  r.front() = lo;
  r.back() = hi;
  return r;
}

inline double truncated_functional(const grid_measure& mu, double R) {
  return quadrature(mu, [R](double x) { return x <= R ? 1.0 : R / x; });
}

namespace detail {
// Candidate scan followed by golden-section refinement of the winning bracket
// (the refined value is kept only if it improves on the scan).
template <class F>
rho_norm_result sup_over_R(const grid_spec& g, F&& f, int per_decade, bool refine) {
  const auto R = r_candidates(g, per_decade);
  std::vector<double> v(R.size());
  parallel_for(R.size(), [&](std::size_t k) { v[k] = f(R[k]); });
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  rho_norm_result out{v[best], R[best]};
  if (!refine || out.value <= 0.0) return out;
  double a = std::log(R[best == 0 ? 0 : best - 1]), b = std::log(R[std::min(best + 1, R.size() - 1)]);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = f(std::exp(c)), fd = f(std::exp(d));
  for (int it = 0; it < 60 && b - a > 1e-10; ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = f(std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = f(std::exp(d));
    }
  }
  const double rm = std::exp(fc >= fd ? c : d), fm = std::max(fc, fd);
  if (fm > out.value) out = {fm, rm};
  return out;
}
}  // namespace detail

inline rho_norm_result rho_norm(const grid_measure& mu, double rho, int per_decade = 4, bool refine = true) {
  check_rho(rho);
  if (rho < 2.0 && mu.atom > 0.0) throw domain_error("rho_norm: an atom at zero has infinite rho-norm for rho < 2");
  return detail::sup_over_R(
      mu.grid, [&](double r) { return std::pow(r, rho - 2.0) * truncated_functional(mu, r); }, per_decade, refine);
}

// Truncated functional plus the contribution of a power tail density(x_max)·(x/x_max)^{-p}, 0 < p < 1,
// attached beyond the grid.
inline double tail_closed_functional(const grid_measure& mu, double R, double p) {
  if (!(p > 0.0 && p < 1.0)) throw parameter_error("tail_closed_functional: tail exponent must lie in (0,1)");
  const double xm = mu.grid.x_max, dN = mu.density.back();
  double tail;
  if (R <= xm) {
    tail = R * dN / p;
  } else {
    const double c = dN * std::pow(xm, p);
    tail = c * (std::pow(R, 1.0 - p) - std::pow(xm, 1.0 - p)) / (1.0 - p) + c * std::pow(R, 1.0 - p) / p;
  }
  return truncated_functional(mu, R) + tail;
}

// ρ-norm of a measure whose density continues as x^{1−ρ} beyond the grid
// (the tail class of the invariant set).
inline rho_norm_result rho_norm_tail_closed(const grid_measure& mu, double rho, int per_decade = 4,
                                            bool refine = true) {
  if (!(rho > 1.0 && rho < 2.0)) throw parameter_error("rho_norm_tail_closed: rho must lie in (1,2)");
  if (mu.atom > 0.0) throw domain_error("rho_norm: an atom at zero has infinite rho-norm for rho < 2");
  return detail::sup_over_R(
      mu.grid, [&](double r) { return std::pow(r, rho - 2.0) * tail_closed_functional(mu, r, rho - 1.0); },
      per_decade, refine);
}

inline double lambda_rho(double rho, double x) {
  const double ax = std::abs(x);
  if (ax <= 1.0) return 0.0;
  return std::max(0.0, 1.0 - std::pow(ax, -(2.0 - rho) / 2.0));
}

inline double lambda_lower_bound_margin(const grid_measure& mu, double rho, double R0, int per_decade = 4,
                                       bool tail_closed = false) {
  if (!(rho > 1.0 && rho < 2.0)) throw parameter_error("lambda margin: rho must lie in (1,2)");
  if (!(R0 > 0.0)) throw parameter_error("lambda margin: R0 must be positive");
  const auto R = r_candidates(mu.grid, per_decade);
  std::vector<double> v(R.size());
  parallel_for(R.size(), [&](std::size_t k) {
    const double F = tail_closed ? tail_closed_functional(mu, R[k], rho - 1.0) : truncated_functional(mu, R[k]);
    v[k] = F - std::pow(R[k], 2.0 - rho) * lambda_rho(rho, R[k] / R0);
  });
  return *std::min_element(v.begin(), v.end());
}

inline double moment(const grid_measure& mu, double gamma, double r_cut = std::numeric_limits<double>::infinity(),
                     bool include_atom = false) {
  if (!(gamma >= 0.0)) throw parameter_error("moment: gamma must be >= 0");
  double m = partial_integral(mu, [gamma](double x) { return std::pow(x, gamma); }, 0.0, r_cut);
  if (include_atom && gamma == 0.0) m += mu.atom;
  return m;
}

inline grid_measure rescale(const grid_measure& mu, double c) {
  if (!(c > 0.0)) throw parameter_error("rescale: c must be positive");
  grid_spec g{mu.grid.x_min / c, mu.grid.x_max / c, mu.grid.n};
  return grid_measure(g, mu.density, mu.atom);
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (e[-1] == ' ' || e[-1] == '\t' || e[-1] == '\r')) --e;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw io_error("cannot parse number '" + s + "' in " + what);
  return v;
}

inline void write_measure_csv(std::ostream& os, const grid_measure& mu) {
  if (mu.atom != 0.0) os << "# atom_at_zero=" << fmt17(mu.atom) << '\n';
  os << "x,density\n";
  for (std::size_t i = 0; i < mu.size(); ++i) os << fmt17(mu.x(i)) << ',' << fmt17(mu.density[i]) << '\n';
}

inline void write_measure_csv(const std::string& path, const grid_measure& mu) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path + " for writing");
  write_measure_csv(f, mu);
  if (!f) throw io_error("write failed: " + path);
}

inline grid_measure read_measure_csv(std::istream& is, const std::string& what = "measure csv") {
  std::string line;
  double atom = 0.0;
  bool header = false;
  std::vector<double> xs, ds;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string key = "# atom_at_zero=";
      if (line.rfind(key, 0) == 0) atom = parse_double(line.substr(key.size()), what);
      continue;
    }
    if (!header) {
      if (line != "x,density") throw io_error(what + ": expected header 'x,density'");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw io_error(what + ": malformed row '" + line + "'");
    xs.push_back(parse_double(line.substr(0, comma), what));
    ds.push_back(parse_double(line.substr(comma + 1), what));
  }
  if (!header) throw io_error(what + ": missing header");
  if (xs.size() < 16) throw io_error(what + ": fewer than 16 rows");
  grid_spec g{xs.front(), xs.back(), xs.size()};
  try {
    g.validate();
  } catch (const parameter_error& e) {
    throw io_error(what + ": " + e.what());
  }
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (std::abs(xs[i] - g.node(i)) > 1e-12 * g.node(i)) throw io_error(what + ": nodes do not form a logarithmic grid");
  try {
    return grid_measure(g, std::move(ds), atom);
  } catch (const parameter_error& e) {
    throw io_error(what + ": " + e.what());
  }
}

inline grid_measure read_measure_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path);
  return read_measure_csv(f, path);
}

}  // namespace kwt

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "core.hpp"
#include "grid_measure.hpp"
#include "interp.hpp"
#include "profile_solver.hpp"

namespace kwt {

// A profile together with its interpolant; integrals are available either truncated to the
// grid ("grid-only") or closed with the tail model of the interpolant ("tail-closed").
class profile_probe {
 public:
  profile_probe(double rho, const grid_measure& phi) : rho_(rho), phi_(phi) {
    check_rho(rho);
    if (phi.atom != 0.0) throw domain_error("diagnostics: profile must not carry an atom");
    zero_ = all_zero(phi);
    if (zero_) return;
    L_ = profile_interp(rho, phi);
    tail_ = view_of(L_);
    grid_ = tail_;
    grid_.x_lo = phi.grid.x_min;
    grid_.x_hi = phi.grid.x_max;
  }

  double rho() const { return rho_; }
  const grid_measure& phi() const { return phi_; }
  bool zero() const { return zero_; }
  const log_hermite& interp() const { return L_; }
  const density_view& view(bool tail_closed) const { return tail_closed ? tail_ : grid_; }

  // ∫_a^b x^power Φ dx
  double integral(double a, double b, double power, bool tail_closed) const {
    if (zero_) return 0.0;
    if (!tail_closed) {
      a = std::max(a, phi_.grid.x_min);
      b = std::min(b, phi_.grid.x_max);
    }
    return L_.integral(a, b, power);
  }

  double eval(double x) const { return zero_ ? 0.0 : L_.eval(x); }

 private:
  double rho_;
  grid_measure phi_;
  bool zero_ = true;
  log_hermite L_;
  density_view tail_, grid_;
};

// ℐ(r) = ∬ Φ(x)Φ(y)/√(xy)·[(x+y−r)₊ ∧ (r−|x−y|)₊] dx dy over the quadrant.
inline double cal_I(const density_view& P, double r, double width = 0.1) {
  if (!(r > 0.0) || !std::isfinite(r)) throw parameter_error("cal_I: r must be positive");
  if (!P.phi) return 0.0;
  auto g = [&](double z) { return P.phi(z) / std::sqrt(z); };
  std::vector<double> kk;
  auto inner = [&](double y) {
    // x > y, x > r − y, x < y + r; the bracket switches branch at x = r
    const double lo = std::max({y, r - y, P.x_lo}), hi = std::min(y + r, P.x_hi);
    if (!(hi > lo)) return 0.0;
    kk = P.kinks;
    kk.push_back(r);
    return detail::log_integral(
        [&](double x) { return g(x) * std::min(x + y - r, r - x + y); }, lo, hi, kk, width);
  };
  std::vector<double> yk = P.kinks;
  yk.push_back(0.5 * r);
  yk.push_back(r);
  return 2.0 * detail::log_integral([&](double y) { return g(y) * inner(y); }, P.x_lo, P.x_hi, yk, width);
}

inline double cal_I(const profile_probe& p, double r, bool tail_closed = true) {
  if (p.zero()) return 0.0;
  return cal_I(p.view(tail_closed), r);
}

// (1/ρ)[(ρ−2)∫₀^r xΦ + (ρ−1) r ∫_r^∞ Φ]; equals ½ℐ(r) for a profile
inline double flux_lhs(const profile_probe& p, double r, bool tail_closed = true) {
  const double rho = p.rho();
  return ((rho - 2.0) * p.integral(0.0, r, 1.0, tail_closed) +
          (rho - 1.0) * r * p.integral(r, std::numeric_limits<double>::infinity(), 0.0, tail_closed)) /
         rho;
}

struct flux_point {
  double r = 0.0, cal_I = 0.0, lhs = 0.0, residual = 0.0;
};

inline flux_point flux_identity_point(const profile_probe& p, double r, bool tail_closed = true) {
  flux_point f;
  f.r = r;
  if (p.zero()) return f;
  f.cal_I = cal_I(p, r, tail_closed);
  f.lhs = flux_lhs(p, r, tail_closed);
  const double half = 0.5 * f.cal_I;
  const double floor = 1e-300;
  f.residual = std::abs(f.lhs - half) / (half + floor);
  return f;
}

inline double flux_identity_residual(double rho, const grid_measure& phi, double r) {
  return flux_identity_point(profile_probe(rho, phi), r).residual;
}

// n log-spaced points over [lo, hi]
inline std::vector<double> log_points(double lo, double hi, int n) {
  if (!(lo > 0.0 && hi >= lo) || n < 1) throw parameter_error("log_points: need 0 < lo <= hi and n >= 1");
  std::vector<double> r(n);
  for (int k = 0; k < n; ++k) r[k] = n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(k) / (n - 1));
  return r;
}

inline std::vector<flux_point> flux_identity_table(const profile_probe& p, const std::vector<double>& r,
                                                   bool tail_closed = true) {
  std::vector<flux_point> out(r.size());
  parallel_for(r.size(), [&](std::size_t k) { out[k] = flux_identity_point(p, r[k], tail_closed); });
  return out;
}

struct norm_flux_result {
  double via_flux = 0.0;  // (ρ/2)∫₀^R ℐ(r) r^{ρ−3} dr
  double direct = 0.0;    // R^{ρ−2}∫(1∧R/x) xΦ dx
  double mismatch = 0.0;
};

// The r-integral uses Gauss panels of width `width` in ln r from r_lo = R·1e−8 and the
// linear behaviour ℐ(r) ∝ r below r_lo.
inline norm_flux_result norm_via_flux(const profile_probe& p, double R, double width = 0.25, bool tail_closed = true) {
  const double rho = p.rho();
  if (!(rho < 2.0)) throw parameter_error("norm_via_flux: needs rho < 2");
  if (!(R > 0.0) || !std::isfinite(R)) throw parameter_error("norm_via_flux: R must be positive");
  if (!(width > 0.0)) throw parameter_error("norm_via_flux: panel width must be positive");
  norm_flux_result out;
  if (p.zero()) return out;
  const double r_lo = R * 1e-8;
  std::vector<double> s, w;
  gauss_panels<8>(std::log(r_lo), std::log(R), width, [&](double t, double wt) {
    s.push_back(t);
    w.push_back(wt);
  });
  std::vector<double> terms(s.size());
  parallel_for(s.size(), [&](std::size_t k) {
    const double r = std::exp(s[k]);
    terms[k] = w[k] * cal_I(p, r, tail_closed) * std::pow(r, rho - 2.0);
  });
  const double I_lo = cal_I(p, r_lo, tail_closed);
  terms.push_back(I_lo / r_lo * std::pow(r_lo, rho - 1.0) / (rho - 1.0));
  out.via_flux = 0.5 * rho * pairwise_sum(terms);
  out.direct = std::pow(R, rho - 2.0) * (p.integral(0.0, R, 1.0, tail_closed) +
                                         R * p.integral(R, std::numeric_limits<double>::infinity(), 0.0, tail_closed));
  out.mismatch = out.direct == 0.0 ? 0.0 : std::abs(out.via_flux - out.direct) / out.direct;
  return out;
}

struct limit_estimates {
  double R = 0.0;
  double upper = 0.0;  // R^{ρ−1}/(2−ρ)·∫_R^∞ Φ
  double lower = 0.0;  // R^{ρ−2}/(ρ−1)·∫_0^R xΦ
};

inline limit_estimates limits_at(const profile_probe& p, double R, bool tail_closed = true) {
  const double rho = p.rho();
  if (!(rho < 2.0)) throw parameter_error("limits_at_infinity: needs rho < 2");
  if (!(R > 0.0)) throw parameter_error("limits_at_infinity: R must be positive");
  limit_estimates e;
  e.R = R;
  e.upper = std::pow(R, rho - 1.0) / (2.0 - rho) *
            p.integral(R, std::numeric_limits<double>::infinity(), 0.0, tail_closed);
  e.lower = std::pow(R, rho - 2.0) / (rho - 1.0) * p.integral(0.0, R, 1.0, tail_closed);
  return e;
}

inline limit_estimates limits_at_infinity(const profile_probe& p, bool tail_closed = true) {
  return limits_at(p, p.phi().grid.x_max / 10.0, tail_closed);
}

// ‖xΦ‖_ρ, either truncated to the grid or with the x^{1−ρ} continuation
inline double rho_norm_of_xphi(double rho, const grid_measure& phi, bool tail_closed = true) {
  std::vector<double> d(phi.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = phi.x(i) * phi.density[i];
  const grid_measure psi(phi.grid, std::move(d));
  return (tail_closed && rho < 2.0 ? rho_norm_tail_closed(psi, rho) : rho_norm(psi, rho)).value;
}

enum class tail_model { power, exponential };

struct fit_result {
  double rate = 0.0;  // exponent p of r^{−p}, or a of e^{−ar}
  double stderr_ = 0.0;
  double r_squared = 0.0;
  double intercept = 0.0;
  double lo = 0.0, hi = 0.0;
  std::size_t n = 0;
};

// Ordinary least squares of v against u, reported as rate = −slope.
inline fit_result linear_fit(const std::vector<double>& u, const std::vector<double>& v) {
  const std::size_t n = u.size();
  if (n < 3 || v.size() != n) throw compute_error("fit: need at least 3 points");
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < n; ++i) mu += u[i], mv += v[i];
  mu /= static_cast<double>(n);
  mv /= static_cast<double>(n);
  double suu = 0.0, suv = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    suu += sq(u[i] - mu);
    suv += (u[i] - mu) * (v[i] - mv);
    svv += sq(v[i] - mv);
  }
  if (!(suu > 0.0)) throw compute_error("fit: degenerate abscissae");
  const double slope = suv / suu, icpt = mv - slope * mu;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) sse += sq(v[i] - icpt - slope * u[i]);
  fit_result f;
  f.rate = -slope;
  f.intercept = icpt;
  f.stderr_ = std::sqrt(sse / static_cast<double>(n - 2) / suu);
  f.r_squared = svv > 0.0 ? 1.0 - sse / svv : 1.0;
  f.n = n;
  return f;
}

// Default fit window: the last resolved decade ending at x_max/3.
inline std::pair<double, double> default_tail_window(const grid_spec& g) { return {g.x_max / 30.0, g.x_max / 3.0}; }

inline fit_result tail_fit(const grid_measure& phi, std::pair<double, double> window, tail_model model) {
  const auto [r1, r2] = window;
  if (!(r1 > 0.0 && r2 > r1)) throw parameter_error("tail_fit: window must satisfy 0 < r1 < r2");
  if (r1 < phi.grid.x_min || r2 > phi.grid.x_max) throw parameter_error("tail_fit: window must lie inside the grid");
  std::vector<double> u, v;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double x = phi.x(i);
    if (x < r1 || x > r2) continue;
    if (!(phi.density[i] > 0.0)) throw compute_error("tail_fit: nonpositive density at " + detail::node_msg(phi, i));
    u.push_back(model == tail_model::power ? std::log(x) : x);
    v.push_back(std::log(phi.density[i]));
  }
  if (u.size() < 20) throw parameter_error("tail_fit: window holds fewer than 20 nodes");
  auto f = linear_fit(u, v);
  f.lo = r1;
  f.hi = r2;
  return f;
}

// Φ(r)r^ρ/((2−ρ)(ρ−1)) at a grid point r (interpolated between nodes)
inline double tail_constant_ratio(double rho, const grid_measure& phi, double r) {
  if (!(rho < 2.0)) throw parameter_error("tail_constant_ratio: needs rho < 2");
  return phi.at(r) * std::pow(r, rho) / tail_constant(rho);
}

struct moment_row {
  double gamma = 0.0, m = 0.0, bound = 0.0;
  bool ok = false;
};

// m_γ tail-closed against γ^γ(3m₀)^{γ+1} (0⁰ = 1)
inline std::vector<moment_row> moment_bound_check(const profile_probe& p, const std::vector<double>& gammas,
                                                  bool tail_closed = true) {
  const double inf = std::numeric_limits<double>::infinity();
  const double A = 3.0 * p.integral(0.0, inf, 0.0, tail_closed);
  std::vector<moment_row> out;
  for (double g : gammas) {
    if (!(g >= 0.0)) throw parameter_error("moment_bound_check: gamma must be >= 0");
    moment_row r;
    r.gamma = g;
    r.m = p.integral(0.0, inf, g, tail_closed);
    r.bound = (g == 0.0 ? 1.0 : std::pow(g, g)) * std::pow(A, g + 1.0);
    r.ok = r.m <= r.bound;
    out.push_back(r);
  }
  return out;
}

inline std::vector<moment_row> moment_bound_check(const grid_measure& phi2, const std::vector<double>& gammas) {
  return moment_bound_check(profile_probe(2.0, phi2), gammas);
}

struct moment_relations {
  double m0 = 0.0, m1 = 0.0, m2 = 0.0;
  bool quadratic_ok = false;  // m₂ ≤ 2m₀m₁
  double holder_gamma = 2.5, holder_n = 3.0, holder_lhs = 0.0, holder_rhs = 0.0;
  bool holder_ok = false;  // m_γ ≤ m₀^{1−γ/n} m_n^{γ/n}
  struct binomial_row {
    int n = 0;
    double m = 0.0, bound = 0.0;
    bool ok = false;
  };
  std::vector<binomial_row> binomial;  // m_n ≤ 4/(n−1) Σ_{j=2}^n C(n,j) m_{n−j} m_{j−1}
};

inline moment_relations moment_relation_check(const profile_probe& p, double rel_tol = 1e-8, bool tail_closed = true) {
  const double inf = std::numeric_limits<double>::infinity();
  auto m = [&](double g) { return p.integral(0.0, inf, g, tail_closed); };
  moment_relations out;
  out.m0 = m(0.0);
  out.m1 = m(1.0);
  out.m2 = m(2.0);
  const double slack = 1.0 + rel_tol;
  out.quadratic_ok = out.m2 <= 2.0 * out.m0 * out.m1 * slack;
  out.holder_lhs = m(out.holder_gamma);
  out.holder_rhs = std::pow(out.m0, 1.0 - out.holder_gamma / out.holder_n) *
                   std::pow(m(out.holder_n), out.holder_gamma / out.holder_n);
  out.holder_ok = out.holder_lhs <= out.holder_rhs * slack;
  std::vector<double> mi(6);
  for (int k = 0; k <= 5; ++k) mi[k] = m(k);
  for (int n = 3; n <= 5; ++n) {
    double s = 0.0;
    for (int j = 2; j <= n; ++j) s += std::tgamma(n + 1.0) / (std::tgamma(j + 1.0) * std::tgamma(n - j + 1.0)) * mi[n - j] * mi[j - 1];
    moment_relations::binomial_row r;
    r.n = n;
    r.m = mi[n];
    r.bound = 4.0 / (n - 1.0) * s;
    r.ok = r.m <= r.bound * slack;
    out.binomial.push_back(r);
  }
  return out;
}

struct interval_row {
  double R = 0.0, I = 0.0;
};

struct exp_lower_result {
  std::vector<interval_row> rows;
  double min_I = 0.0;
  fit_result fit;  // −log I_R against R
};

// I_R = ∫_{(R,R+1)} Φ on the grid; requires R + 1 ≤ x_max.
inline exp_lower_result exp_lower_check(const grid_measure& phi2, const std::vector<double>& R_list) {
  if (R_list.size() < 3) throw parameter_error("exp_lower_check: need at least 3 R values");
  exp_lower_result out;
  std::vector<double> u, v;
  for (double R : R_list) {
    if (!(R >= 0.0) || R + 1.0 > phi2.grid.x_max) throw parameter_error("exp_lower_check: R + 1 must lie inside the grid");
    const double I = partial_integral(phi2, [](double) { return 1.0; }, R, R + 1.0);
    out.rows.push_back({R, I});
    if (!(I > 0.0)) throw compute_error("exp_lower_check: interval integral vanishes at R=" + fmt17(R));
    u.push_back(R);
    v.push_back(std::log(I));
  }
  out.min_I = std::min_element(out.rows.begin(), out.rows.end(), [](auto& a, auto& b) { return a.I < b.I; })->I;
  out.fit = linear_fit(u, v);
  out.fit.lo = R_list.front();
  out.fit.hi = R_list.back();
  return out;
}

// Integer R values covering [r1, r2 − 1]
inline std::vector<double> interval_points(double r1, double r2) {
  std::vector<double> R;
  for (double x = std::ceil(r1); x + 1.0 <= r2; x += 1.0) R.push_back(x);
  return R;
}

// sup over grid nodes R of ∫₀^R Φ / √R
inline double sqrtR_bound_constant(const profile_probe& p, bool tail_closed = true) {
  if (p.zero()) return 0.0;
  const auto& phi = p.phi();
  const std::size_t n = phi.size();
  std::vector<double> cell(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    cell[i] = i == 0 ? p.integral(0.0, phi.x(0), 0.0, tail_closed) : p.integral(phi.x(i - 1), phi.x(i), 0.0, tail_closed);
  });
  double acc = 0.0, best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += cell[i];
    best = std::max(best, acc / std::sqrt(phi.x(i)));
  }
  return best;
}

inline double sqrtR_bound_constant(const grid_measure& phi, double rho = 1.5) {
  return sqrtR_bound_constant(profile_probe(rho, phi));
}

// ---------------------------------------------------------------------------

struct diagnostics_options {
  std::optional<std::pair<double, double>> tail_window;  // default: last resolved decade ending at x_max/3
  int flux_points = 10;
  double flux_lo_decades = 2.0;  // flux r-range: [x_min·10^d, x_max·10^{−d}]
  double norm_R = 0.0;           // 0: geometric mid-grid
  std::vector<double> gammas = {0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4, 4.5, 5, 5.5, 6, 6.5, 7, 7.5, 8};
};

// One value computed twice: truncated to the grid and with the tail model.
struct dual {
  double grid_only = 0.0, tail_closed = 0.0;
};

struct diagnostics_report {
  double rho = 0.0;
  fit_result tail_fit_result;  // power for rho < 2, exponential for rho = 2
  std::optional<double> tail_constant_ratio;
  double flux_identity_max_residual = 0.0;
  std::vector<flux_point> flux_table;          // tail-closed
  std::vector<flux_point> flux_table_grid;     // grid-only
  std::optional<norm_flux_result> norm_flux;   // tail-closed
  std::optional<norm_flux_result> norm_flux_grid;
  std::optional<limit_estimates> limits, limits_grid;
  std::optional<dual> rho_norm_value;
  std::vector<moment_row> moment_table;  // rho = 2
  std::optional<moment_relations> relations;
  std::optional<double> exp_upper_rate, exp_lower_rate;
  std::optional<exp_lower_result> intervals;
  dual sqrtR_constant;
};

inline diagnostics_report run_diagnostics(double rho, const grid_measure& phi, const diagnostics_options& opt = {}) {
  const profile_probe p(rho, phi);
  const auto& g = phi.grid;
  diagnostics_report rep;
  rep.rho = rho;
  const auto win = opt.tail_window.value_or(default_tail_window(g));
  const bool exp_regime = rho >= 2.0;
  if (!p.zero()) rep.tail_fit_result = tail_fit(phi, win, exp_regime ? tail_model::exponential : tail_model::power);
  if (!exp_regime) rep.tail_constant_ratio = tail_constant_ratio(rho, phi, win.second);

  const double scale = std::pow(10.0, opt.flux_lo_decades);
  if (!(g.x_min * scale < g.x_max / scale)) throw parameter_error("diagnostics: flux range is empty on this grid");
  const auto rs = log_points(g.x_min * scale, g.x_max / scale, opt.flux_points);
  rep.flux_table = flux_identity_table(p, rs, true);
  rep.flux_table_grid = flux_identity_table(p, rs, false);
  for (const auto& f : rep.flux_table) rep.flux_identity_max_residual = std::max(rep.flux_identity_max_residual, f.residual);

  if (!exp_regime) {
    const double R = opt.norm_R > 0.0 ? opt.norm_R : std::sqrt(g.x_min * g.x_max);
    rep.norm_flux = norm_via_flux(p, R, 0.25, true);
    rep.norm_flux_grid = norm_via_flux(p, R, 0.25, false);
    rep.limits = limits_at_infinity(p, true);
    rep.limits_grid = limits_at_infinity(p, false);
    rep.rho_norm_value = dual{rho_norm_of_xphi(rho, phi, false), rho_norm_of_xphi(rho, phi, true)};
  } else if (!p.zero()) {
    rep.moment_table = moment_bound_check(p, opt.gammas);
    rep.relations = moment_relation_check(p);
    rep.exp_upper_rate = rep.tail_fit_result.rate;
    rep.intervals = exp_lower_check(phi, interval_points(win.first, win.second));
    rep.exp_lower_rate = rep.intervals->fit.rate;
  }
  rep.sqrtR_constant = {sqrtR_bound_constant(p, false), sqrtR_bound_constant(p, true)};
  return rep;
}

inline void write_flux_csv(std::ostream& os, const std::vector<flux_point>& t) {
  os << "r,calI\n";
  for (const auto& f : t) os << fmt17(f.r) << ',' << fmt17(f.cal_I) << '\n';
}

inline void write_interval_csv(std::ostream& os, const std::vector<interval_row>& t) {
  os << "R,I_R\n";
  for (const auto& r : t) os << fmt17(r.R) << ',' << fmt17(r.I) << '\n';
}

inline void write_moment_csv(std::ostream& os, const std::vector<moment_row>& t) {
  os << "gamma,m_gamma,bound\n";
  for (const auto& r : t) os << fmt17(r.gamma) << ',' << fmt17(r.m) << ',' << fmt17(r.bound) << '\n';
}

}  // namespace kwt

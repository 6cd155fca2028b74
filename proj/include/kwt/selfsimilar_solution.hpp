#pragma once

#include <cmath>
#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <math.h>  // boost pchip calls isnan unqualified
#include <boost/math/interpolators/pchip.hpp>

#include "core.hpp"
#include "grid_measure.hpp"
#include "profile_solver.hpp"

namespace kwt {

// G(t) = (M − ‖Φ‖₁ τ^{−(ρ−1)/ρ}) δ₀ + Φ(x/τ^{1/ρ})/τ, τ = t + t0.
struct weak_solution_family {
  double rho = 1.5;
  grid_measure phi;
  double M = 0.0;
  double t0 = 1.0;
  double mass = 0.0;  // grid quadrature of Φ
};

inline weak_solution_family make_family(double rho, const grid_measure& phi, double t0,
                                        double M = std::numeric_limits<double>::quiet_NaN()) {
  check_rho(rho);
  if (!(t0 > 0.0) || !std::isfinite(t0)) throw parameter_error("family: t0 must be positive");
  if (phi.atom != 0.0) throw domain_error("family: profile must not carry an atom");
  weak_solution_family f;
  f.rho = rho;
  f.phi = phi;
  f.t0 = t0;
  f.mass = total_mass(phi);
  const double q = (rho - 1.0) / rho;
  f.M = std::isnan(M) ? f.mass * std::pow(t0, -q) : M;
  if (!(f.M >= 0.0) || !std::isfinite(f.M)) throw parameter_error("family: M must be finite and nonnegative");
  if (f.M < f.mass * std::pow(t0, -q))
    throw parameter_error("family: M t0^{(rho-1)/rho} is below the profile mass (negative condensate)");
  return f;
}

inline double family_atom(const weak_solution_family& f, double t) {
  const double q = (f.rho - 1.0) / f.rho;
  return std::max(0.0, f.M - f.mass * std::pow(t + f.t0, -q));
}

// G(t) on the dilated grid x_i·τ^{1/ρ}, which keeps mass (and for ρ=2 the first moment) exact.
inline grid_measure evaluate_G(const weak_solution_family& f, double t) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw parameter_error("evaluate_G: t must be finite and nonnegative");
  const double tau = t + f.t0, lam = std::pow(tau, 1.0 / f.rho);
  grid_spec g{f.phi.grid.x_min * lam, f.phi.grid.x_max * lam, f.phi.grid.n};
  std::vector<double> d(f.phi.density);
  for (double& v : d) v /= tau;
  return grid_measure(g, std::move(d), family_atom(f, t));
}

// Monotone cubic (PCHIP) resampling in log-log space; zero outside the source range.
inline grid_measure resample(const grid_measure& mu, const grid_spec& target) {
  target.validate();
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(mu.density[i] > 0.0)) throw domain_error("resample: density must be strictly positive");
    lx.push_back(std::log(mu.x(i)));
    ly.push_back(std::log(mu.density[i]));
  }
  const double lo = lx.front(), hi = lx.back();
  boost::math::interpolators::pchip<std::vector<double>> P(std::move(lx), std::move(ly));
  std::vector<double> out(target.n, 0.0);
  for (std::size_t i = 0; i < target.n; ++i) {
    const double t = std::log(target.node(i));
    if (t >= lo && t <= hi) out[i] = std::exp(P(t));
  }
  return grid_measure(target, std::move(out), mu.atom);
}

// φ(s, x) = (1 + slope·s)·shape(x)
struct timed_test {
  test_function shape;
  double slope = 0.0;
  bool constant = false;  // shape is a constant; its second differences vanish identically
};

inline timed_test constant_test(double c) {
  timed_test t;
  t.shape.name = "constant(" + fmt17(c) + ")";
  t.shape.f = [c](double) { return c; };
  t.shape.df = [](double) { return 0.0; };
  t.shape.d2f = [](double) { return 0.0; };
  t.shape.lo = 0.0;
  t.shape.hi = std::numeric_limits<double>::infinity();
  t.constant = true;
  return t;
}

// z ↦ f(λz)
inline test_function dilate(const test_function& tf, double lam) {
  test_function t;
  t.name = tf.name;
  auto f = tf.f, df = tf.df, d2f = tf.d2f;
  t.f = [f, lam](double z) { return f(lam * z); };
  t.df = [df, lam](double z) { return lam * df(lam * z); };
  t.d2f = [d2f, lam](double z) { return lam * lam * d2f(lam * z); };
  t.lo = tf.lo / lam;
  t.hi = tf.hi / lam;
  for (double k : tf.kinks) t.kinks.push_back(k / lam);
  return t;
}

// 5 bumps with log-staggered centres covering [10 x_min, x_max/10]; even entries frozen in
// time, odd entries linear (1 + t/2).
inline std::vector<timed_test> family_battery(const grid_spec& g) {
  const double lo = std::log(g.x_min * 10.0), hi = std::log(g.x_max / 10.0), w = (hi - lo) / 5.0;
  std::vector<timed_test> out;
  for (int k = 0; k < 5; ++k) {
    timed_test t;
    t.shape = log_bump(std::exp(lo + (k + 0.5) * w), std::exp(0.5 * w));
    t.slope = k % 2 == 0 ? 0.0 : 0.5;
    out.push_back(t);
  }
  return out;
}

struct family_residual_row {
  std::size_t test_id = 0;
  double t_end = 0.0;
  double residual = 0.0;
  double scale = 0.0;
};

namespace detail {
struct family_sample {
  double density_part = 0.0;  // (λ/τ)∫f(λz)Φ(z)dz
  double collision = 0.0;     // (λ/τ²)·∬_{u>v} ΦΦ/√(uv) Δ²f(λ·)
  double collision_scale = 0.0;
};

inline family_sample sample_family(const weak_solution_family& f, const density_view& P, double prof_mass,
                                   const timed_test& tt, double s, double width) {
  const double tau = s + f.t0, lam = std::pow(tau, 1.0 / f.rho);
  family_sample out;
  if (tt.constant) {
    out.density_part = lam / tau * tt.shape.f(0.0) * prof_mass;
    return out;
  }
  const auto tf = dilate(tt.shape, lam);
  std::vector<double> kinks = P.kinks;
  for (double k : tf.kinks) kinks.push_back(k);
  const double a = tf.lo > 0.0 ? tf.lo : P.x_lo, b = std::isfinite(tf.hi) ? tf.hi : P.x_hi;
  out.density_part = lam / tau * log_integral([&](double z) { return tf.f(z) * P.phi(z); }, a, b, kinks, width);
  const auto wp = weak_form_parts(P, f.rho, tf, width);
  out.collision = lam / (tau * tau) * wp.rhs;
  out.collision_scale = lam / (tau * tau) * wp.scale;
  return out;
}
}  // namespace detail

// Residuals of the weak formulation for each (test, t_end); composite Simpson in time on
// n_points nodes (odd, ≥ 33). All t_end share one time step when they are commensurate.
inline std::vector<family_residual_row> weak_form_residuals(const weak_solution_family& f,
                                                            const std::vector<timed_test>& tests,
                                                            const std::vector<double>& t_ends, int n_points = 33,
                                                            double width = 0.2) {
  if (n_points < 33 || n_points % 2 == 0) throw parameter_error("weak_form_residual: need an odd n_points >= 33");
  if (!(width > 0.0)) throw parameter_error("weak_form_residual: panel width must be positive");
  for (double te : t_ends)
    if (!(te > 0.0) || !std::isfinite(te)) throw parameter_error("weak_form_residual: t_end must be positive");
  std::vector<family_residual_row> rows;
  if (t_ends.empty() || tests.empty()) return rows;
  const bool zero = all_zero(f.phi);
  std::optional<log_hermite> L;
  density_view P;
  double prof_mass = 0.0;
  if (!zero) {
    L.emplace(profile_interp(f.rho, f.phi));
    P = view_of(*L);
    prof_mass = detail::log_integral(P.phi, P.x_lo, P.x_hi, P.kinks, width);
  }
  const double dt = *std::min_element(t_ends.begin(), t_ends.end()) / (n_points - 1);
  const double q = (f.rho - 1.0) / f.rho;
  // atom consistent with the quadrature used for the density part
  auto atom = [&](double s) { return f.M - prof_mass * std::pow(s + f.t0, -q); };
  for (std::size_t k = 0; k < tests.size(); ++k) {
    const auto& tt = tests[k];
    const double f0 = tt.shape.f(0.0);
    std::map<long, detail::family_sample> shared_cache;
    for (double te : t_ends) {
      const double steps = te / dt;
      long n = std::lround(steps);
      const bool shared = std::abs(steps - n) < 1e-9 * steps && n % 2 == 0;
      double h = dt;
      if (!shared) {
        n = n_points - 1;
        h = te / n;
      }
      std::map<long, detail::family_sample> own;
      auto& cache = shared ? shared_cache : own;
      auto node = [&](long i) -> const detail::family_sample& {
        auto it = cache.find(i);
        if (it != cache.end()) return it->second;
        detail::family_sample v;
        if (!zero) v = detail::sample_family(f, P, prof_mass, tt, i == n ? te : i * h, width);
        return cache.emplace(i, v).first->second;
      };
      auto I = [&](long i) {
        const double s = i == n ? te : i * h, T = 1.0 + tt.slope * s;
        return T * (zero ? 0.0 : atom(s) * f0 + node(i).density_part);
      };
      double integral = 0.0, iscale = 0.0;
      for (long i = 0; i <= n; ++i) {
        const double s = i == n ? te : i * h, T = 1.0 + tt.slope * s;
        const double c = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        const auto& v = node(i);
        const double base = zero ? 0.0 : atom(s) * f0 + v.density_part;
        integral += c * (tt.slope * base + T * v.collision);
        iscale += c * (std::abs(tt.slope * base) + std::abs(T) * v.collision_scale);
      }
      integral *= h / 3.0;
      iscale *= h / 3.0;
      const double lhs = I(n) - I(0);
      rows.push_back({k, te, std::abs(lhs - integral), std::abs(I(n)) + std::abs(I(0)) + iscale});
    }
  }
  return rows;
}

inline family_residual_row weak_form_residual(const weak_solution_family& f, const timed_test& test, double t_end,
                                              int n_points = 33) {
  return weak_form_residuals(f, {test}, {t_end}, n_points).front();
}

inline void write_residual_csv(std::ostream& os, const std::vector<family_residual_row>& rows) {
  os << "test_id,t_end,residual,scale\n";
  for (const auto& r : rows)
    os << r.test_id << ',' << fmt17(r.t_end) << ',' << fmt17(r.residual) << ',' << fmt17(r.scale) << '\n';
}

}  // namespace kwt

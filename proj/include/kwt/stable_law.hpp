#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "core.hpp"
#include "grid_measure.hpp"

namespace kwt {

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 2.0)) throw parameter_error("alpha must lie in the open interval (0,2)");
}

inline double c_alpha(double alpha) {
  check_alpha(alpha);
  const double pi = boost::math::constants::pi<double>();
  if (alpha == 1.0) return pi;
  return -2.0 * std::tgamma(-alpha) * std::cos(alpha * pi / 2.0);
}

namespace detail {

enum class fourier_kind { cos, ksin, sin_over_k };

// (1/π)∫₀^∞ K(k) e^{−c k^α} dk with K one of cos(kz), k sin(kz), sin(kz)/k.
inline double stable_fourier(double alpha, double c, double z, fourier_kind kind) {
  const double pi = boost::math::constants::pi<double>();
  const double kmax = std::pow(37.0 / c, 1.0 / alpha);
  const double kscale = std::pow(c, -1.0 / alpha);
  auto f = [&](double k) {
    const double e = std::exp(-c * std::pow(k, alpha));
    switch (kind) {
      case fourier_kind::cos: return std::cos(k * z) * e;
      case fourier_kind::ksin: return k * std::sin(k * z) * e;
      default: return (k == 0.0 ? z : std::sin(k * z) / k) * e;
    }
  };
  const double half_period = z > 0.0 ? pi / z : std::numeric_limits<double>::infinity();
  const double k1 = std::min({half_period, 0.5 * kscale, kmax});
  thread_local boost::math::quadrature::tanh_sinh<double> ts(12);
  double first = ts.integrate(f, 0.0, k1, 1e-15);
  std::vector<double> parts;
  parts.push_back(first);
  const auto& g = gauss<20>();
  double a = k1;
  while (a < kmax) {
    const double w = std::min(half_period, std::max(0.5 * kscale, 0.25 * a));
    const double b = std::min(a + w, kmax);
    const double half = 0.5 * (b - a), mid = a + half;
    double s = 0.0;
    for (int q = 0; q < 20; ++q) s += g.w[q] * f(mid + half * g.x[q]);
    parts.push_back(half * s);
    a = b;
  }
  return pairwise_sum(parts) / pi;
}

}  // namespace detail

inline double v_alpha_quadrature(double alpha, double z) {
  check_alpha(alpha);
  return detail::stable_fourier(alpha, c_alpha(alpha), std::abs(z), detail::fourier_kind::cos);
}

// ∫₀^Z v_α, from (1/π)∫ sin(kZ)/k e^{−ck^α} dk
inline double v_alpha_half_mass(double alpha, double Z) {
  check_alpha(alpha);
  return detail::stable_fourier(alpha, c_alpha(alpha), Z, detail::fourier_kind::sin_over_k);
}

struct stable_table {
  double alpha = 1.0;
  double c = 0.0;
  double core_z_max = 100.0;
  double tail_switch = 0.0;
  double z_lin = 0.01;
  std::size_t n_lin = 64;
  std::vector<double> z, v, dv;
  // tail series v ~ Σ a_n z^{−nα−1}, truncated at n_terms
  std::vector<double> a;

  double series(double zz) const {
    double s = 0.0;
    for (std::size_t n = 1; n <= a.size(); ++n) s += a[n - 1] * std::pow(zz, -static_cast<double>(n) * alpha - 1.0);
    return s;
  }
  // ∫_Z^∞ of the series, term by term
  double series_tail_mass(double Z) const {
    double s = 0.0;
    for (std::size_t n = 1; n <= a.size(); ++n) {
      const double na = static_cast<double>(n) * alpha;
      s += a[n - 1] * std::pow(Z, -na) / na;
    }
    return s;
  }

  std::size_t locate(double zz) const {
    const std::size_t n_log = z.size() - n_lin;
    std::size_t k;
    if (zz < z_lin) {
      k = static_cast<std::size_t>(zz / z_lin * static_cast<double>(n_lin));
    } else {
      const double s = std::log(zz / z_lin) / std::log(core_z_max / z_lin) * static_cast<double>(n_log - 1);
      k = n_lin + static_cast<std::size_t>(std::max(0.0, std::floor(s)));
    }
    k = std::min(k, z.size() - 2);
    while (k > 0 && z[k] > zz) --k;
    while (k + 2 < z.size() && z[k + 1] < zz) ++k;
    return k;
  }

  double eval(double zz) const {
    zz = std::abs(zz);
    if (zz > core_z_max) return series(zz);
    const std::size_t k = locate(zz);
    const double h = z[k + 1] - z[k], s = (zz - z[k]) / h;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
    return h00 * v[k] + h10 * h * dv[k] + h01 * v[k + 1] + h11 * h * dv[k + 1];
  }

  // ∫₀^Z v, exact on the Hermite interpolant inside the core, series beyond
  double half_mass(double Z) const {
    Z = std::abs(Z);
    std::vector<double> parts;
    const double zc = std::min(Z, core_z_max);
    for (std::size_t k = 0; k + 1 < z.size() && z[k] < zc; ++k) {
      const double hi = std::min(z[k + 1], zc);
      if (hi == z[k + 1]) {
        const double h = z[k + 1] - z[k];
        parts.push_back(0.5 * h * (v[k] + v[k + 1]) + h * h / 12.0 * (dv[k] - dv[k + 1]));
      } else {
        const auto& g = gauss<8>();
        const double half = 0.5 * (hi - z[k]), mid = z[k] + half;
        double s = 0.0;
        for (int q = 0; q < 8; ++q) s += g.w[q] * eval(mid + half * g.x[q]);
        parts.push_back(half * s);
      }
    }
    double m = pairwise_sum(parts);
    if (Z > core_z_max) m += series_tail_mass(core_z_max) - series_tail_mass(Z);
    return m;
  }
};

namespace detail {
inline std::vector<double> stable_series_coeffs(double alpha, double c, double z_ref) {
  const double pi = boost::math::constants::pi<double>();
  std::vector<double> a;
  double prev = std::numeric_limits<double>::infinity();
  for (int n = 1; n <= 400; ++n) {
    const double na = n * alpha;
    const double sn = std::sin(n * pi * alpha / 2.0);
    const double logmag = std::lgamma(na + 1.0) - std::lgamma(n + 1.0) + n * std::log(c) - std::log(pi);
    const double coef = (n % 2 == 1 ? 1.0 : -1.0) * sn * std::exp(logmag);
    const double size = std::exp(logmag - (na + 1.0) * std::log(z_ref));
    if (alpha > 1.0 && size > prev) break;  // asymptotic: stop at the smallest term
    a.push_back(std::abs(sn) < 1e-15 ? 0.0 : coef);
    prev = size;
    if (size < 1e-30) break;
  }
  return a;
}
}  // namespace detail

// Smallest z beyond which |z^{α+1} v(z) − 1| < 2% at every probe up to 1e12.
inline double compute_tail_switch(const stable_table& t) {
  std::vector<double> zs;
  for (std::size_t k = t.n_lin; k < t.z.size(); ++k) zs.push_back(t.z[k]);
  for (int j = 1; j <= 400; ++j) zs.push_back(t.core_z_max * std::pow(1e10, j / 400.0));
  double sw = zs.back();
  for (std::size_t k = zs.size(); k-- > 0;) {
    const double dev = std::abs(std::pow(zs[k], t.alpha + 1.0) * t.eval(zs[k]) - 1.0);
    if (dev >= 0.02) break;
    sw = zs[k];
  }
  return sw;
}

inline stable_table build_stable_table(double alpha, std::size_t samples = 4096, double core_z_max = 100.0) {
  check_alpha(alpha);
  if (samples < 128) throw parameter_error("stable table: need at least 128 samples");
  if (!(core_z_max > 1.0)) throw parameter_error("stable table: core_z_max must exceed 1");
  stable_table t;
  t.alpha = alpha;
  t.c = c_alpha(alpha);
  t.core_z_max = core_z_max;
  const std::size_t n_log = samples - t.n_lin;
  t.z.resize(samples);
  for (std::size_t k = 0; k < t.n_lin; ++k) t.z[k] = t.z_lin * static_cast<double>(k) / static_cast<double>(t.n_lin);
  for (std::size_t j = 0; j < n_log; ++j)
    t.z[t.n_lin + j] = t.z_lin * std::pow(core_z_max / t.z_lin, static_cast<double>(j) / static_cast<double>(n_log - 1));
  t.z.back() = core_z_max;
  t.v.resize(samples);
  t.dv.resize(samples);
  parallel_for(samples, [&](std::size_t k) {
    t.v[k] = detail::stable_fourier(alpha, t.c, t.z[k], detail::fourier_kind::cos);
    t.dv[k] = -detail::stable_fourier(alpha, t.c, t.z[k], detail::fourier_kind::ksin);
  });
  t.a = detail::stable_series_coeffs(alpha, t.c, core_z_max);
  t.tail_switch = compute_tail_switch(t);
  return t;
}

inline double v_alpha_eval(const stable_table& t, double z) { return t.eval(z); }

inline double u_alpha_eval(const stable_table& t, double time, double x) {
  if (!(time > 0.0)) throw parameter_error("u_alpha: t must be positive");
  const double s = std::pow(time, -1.0 / t.alpha);
  return s * t.eval(x * s);
}

struct stable_invariants {
  double normalization = 0.0;       // 2∫₀^Z v + series tail mass at Z = tail_switch
  double normalization_bare = 0.0;  // same with the leading tail 2Z^{−α}/α only
  double tail_product_50 = 0.0;     // 50^{α+1} v(50)
  bool positive = true;
  bool strictly_decreasing = true;
  double cauchy_max_err = -1.0;  // α = 1 only
};

inline stable_invariants check_stable_table(const stable_table& t) {
  stable_invariants r;
  const double Z = t.tail_switch;
  const double hm = t.half_mass(std::min(Z, t.core_z_max));
  const double beyond = Z > t.core_z_max ? t.series_tail_mass(t.core_z_max) : t.series_tail_mass(Z);
  r.normalization = 2.0 * (hm + beyond);
  r.normalization_bare = 2.0 * t.half_mass(Z) + 2.0 * std::pow(Z, -t.alpha) / t.alpha;
  r.tail_product_50 = std::pow(50.0, t.alpha + 1.0) * t.eval(50.0);
  for (std::size_t k = 0; k < t.z.size(); ++k) {
    if (!(t.v[k] > 0.0)) r.positive = false;
    if (k > 0 && !(t.v[k] < t.v[k - 1])) r.strictly_decreasing = false;
  }
  if (t.alpha == 1.0) {
    const double pi2 = boost::math::constants::pi_sqr<double>();
    double m = 0.0;
    for (int j = 0; j <= 10000; ++j) {
      const double z = 10.0 * j / 10000.0;
      m = std::max(m, std::abs(t.eval(z) - 1.0 / (pi2 + z * z)));
    }
    r.cauchy_max_err = m;
  }
  return r;
}

inline void write_stable_csv(const std::string& path, const stable_table& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path + " for writing");
  f << "# alpha=" << fmt17(t.alpha) << " c_alpha=" << fmt17(t.c) << " tail_switch=" << fmt17(t.tail_switch)
    << " core_z_max=" << fmt17(t.core_z_max) << '\n';
  f << "z,v\n";
  for (std::size_t k = 0; k < t.z.size(); ++k) f << fmt17(t.z[k]) << ',' << fmt17(t.v[k]) << '\n';
  if (!f) throw io_error("write failed: " + path);
}

// Slopes of a loaded table come from three-point differences on the sample grid.
inline stable_table read_stable_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path);
  stable_table t;
  std::string line;
  bool meta = false, header = false;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string kv;
      while (is >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw io_error(path + ": bad metadata '" + kv + "'");
        const std::string k = kv.substr(0, eq);
        const double val = parse_double(kv.substr(eq + 1), path);
        if (k == "alpha") t.alpha = val, meta = true;
        else if (k == "c_alpha") t.c = val;
        else if (k == "tail_switch") t.tail_switch = val;
        else if (k == "core_z_max") t.core_z_max = val;
        else throw io_error(path + ": unknown metadata key '" + k + "'");
      }
      continue;
    }
    if (!header) {
      if (line != "z,v") throw io_error(path + ": expected header 'z,v'");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw io_error(path + ": malformed row");
    t.z.push_back(parse_double(line.substr(0, comma), path));
    t.v.push_back(parse_double(line.substr(comma + 1), path));
  }
  if (!meta || !header || t.z.size() < 128) throw io_error(path + ": incomplete stable table");
  try {
    check_alpha(t.alpha);
  } catch (const parameter_error& e) {
    throw io_error(path + ": " + e.what());
  }
  const std::size_t n = t.z.size();
  t.dv.assign(n, 0.0);
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double h0 = t.z[k] - t.z[k - 1], h1 = t.z[k + 1] - t.z[k];
    t.dv[k] = (t.v[k + 1] * h0 * h0 - t.v[k - 1] * h1 * h1 + t.v[k] * (h1 * h1 - h0 * h0)) / (h0 * h1 * (h0 + h1));
  }
  t.dv[n - 1] = (t.v[n - 1] - t.v[n - 2]) / (t.z[n - 1] - t.z[n - 2]);
  t.a = detail::stable_series_coeffs(t.alpha, t.c, t.core_z_max);
  return t;
}

// u(t,x) = ∫₀^∞ u0(y)(u^α(t,x−y) − u^α(t,x+y)) dy for odd u0.
inline std::vector<double> evolve_odd(const std::function<double(double)>& u0, const stable_table& tab, double time,
                                      const std::vector<double>& xs, const std::vector<double>& kinks = {}) {
  if (!(time > 0.0)) throw parameter_error("evolve_odd: t must be positive");
  using boost::math::quadrature::gauss_kronrod;
  const double width = std::pow(time, 1.0 / tab.alpha);
  std::vector<double> out(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) {
    const double x = xs[i];
    if (x == 0.0) {
      out[i] = 0.0;
      return;
    }
    const double sgn = x < 0.0 ? -1.0 : 1.0, ax = std::abs(x);
    auto f = [&](double y) { return u0(y) * (u_alpha_eval(tab, time, ax - y) - u_alpha_eval(tab, time, ax + y)); };
    std::vector<double> br{0.0};
    for (double m : {-8.0, -2.0, -0.5, 0.0, 0.5, 2.0, 8.0}) br.push_back(ax + m * width);
    for (double k : kinks) br.push_back(k);
    br.push_back(4.0 * (ax + 8.0 * width + 1.0));
    std::sort(br.begin(), br.end());
    br.erase(std::remove_if(br.begin(), br.end(), [](double b) { return b < 0.0; }), br.end());
    br.erase(std::unique(br.begin(), br.end()), br.end());
    std::vector<double> parts;
    for (std::size_t k = 0; k + 1 < br.size(); ++k)
      parts.push_back(gauss_kronrod<double, 61>::integrate(f, br[k], br[k + 1], 8, 1e-12));
    parts.push_back(
        gauss_kronrod<double, 61>::integrate(f, br.back(), std::numeric_limits<double>::infinity(), 8, 1e-12));
    out[i] = sgn * pairwise_sum(parts);
  });
  return out;
}

}  // namespace kwt

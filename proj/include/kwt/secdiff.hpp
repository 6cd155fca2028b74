#pragma once

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace kwt {

template <class F>
double delta2(F&& f, double x, double y) {
  return f(x + y) + f(x - y) - 2.0 * f(x);
}

namespace detail {
inline double absdiff(double x, double y) {
  const double d = std::abs(x - y);
  return d < 1e-300 ? 0.0 : d;
}
}  // namespace detail

template <class F>
double D2(F&& phi, double x, double y) {
  return phi(x + y) + phi(detail::absdiff(x, y)) - 2.0 * phi(std::max(x, y));
}

template <class F>
double D2star(F&& theta, double x, double y) {
  auto zt = [&](double z) { return z == 0.0 ? 0.0 : z * theta(z); };
  return D2(zt, x, y);
}

// theta_R(z) = 1 ∧ R/z
inline double theta_R(double R, double z) { return z <= R ? 1.0 : R / z; }

inline double D2star_theta_R_closed(double R, double x, double y) {
  const double a = std::max(0.0, x + y - R), b = std::max(0.0, R - detail::absdiff(x, y));
  return -std::min(a, b);
}

// |Δ²_y f(x) − ∫ (|y| − |w − x|)₊ f''(w) dw|, integral split at the tent apex.
template <class F, class F2>
double delta2_kernel_identity_check(F&& f, F2&& f2, double x, double y) {
  const double ay = std::abs(y);
  if (ay == 0.0) return std::abs(delta2(f, x, y));
  using boost::math::quadrature::gauss_kronrod;
  auto g = [&](double w) { return std::max(0.0, ay - std::abs(w - x)) * f2(w); };
  const double I = gauss_kronrod<double, 31>::integrate(g, x - ay, x, 12, 1e-14) +
                   gauss_kronrod<double, 31>::integrate(g, x, x + ay, 12, 1e-14);
  return std::abs(delta2(f, x, y) - I);
}

// ∂_y Δ²_y f(x) = ∫_{x−y}^{x+y} f''  checked against a centred difference of Δ² in y.
template <class F, class F2>
double delta2_derivative_identity_check(F&& f, F2&& f2, double x, double y) {
  using boost::math::quadrature::gauss_kronrod;
  const double ay = std::abs(y), eps = 1e-4 * std::max(1.0, ay);
  const double lhs = (delta2(f, x, ay + eps) - delta2(f, x, ay - eps)) / (2.0 * eps);
  const double I = gauss_kronrod<double, 31>::integrate(f2, x - ay, x + ay, 12, 1e-14);
  return std::abs(lhs - I);
}

}  // namespace kwt

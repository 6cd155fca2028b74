#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

namespace kwt {

// Error taxonomy mirrors the CLI exit codes: parameter -> 1, compute -> 2, io -> 3.
struct parameter_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct domain_error : parameter_error {
  using parameter_error::parameter_error;
};
struct compute_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> n{1};
  return n;
}
}  // namespace detail

inline void set_threads(unsigned n) { detail::thread_setting() = std::max(1u, n); }
inline unsigned threads() { return detail::thread_setting(); }

// Static block partition; each index is handled by exactly one worker and
// writes only its own output slot, so results do not depend on the count.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t nt = std::min<std::size_t>(threads(), n);
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nt);
  std::exception_ptr err;
  std::atomic<bool> failed{false};
  for (std::size_t w = 0; w < nt; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = n * w / nt, hi = n * (w + 1) / nt;
      try {
        for (std::size_t i = lo; i < hi; ++i) f(i);
      } catch (...) {
        if (!failed.exchange(true)) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// Fixed binary-tree summation; the tree shape depends only on n.
inline double pairwise_sum(const double* p, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    return s;
  }
  const std::size_t m = n / 2;
  return pairwise_sum(p, m) + pairwise_sum(p + m, n - m);
}
inline double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

// Full Gauss-Legendre rule on [-1,1].
template <int N>
struct gauss_rule {
  std::array<double, N> x{}, w{};
  gauss_rule() {
    using G = boost::math::quadrature::gauss<double, N>;
    const auto& a = G::abscissa();
    const auto& wt = G::weights();
    int k = 0;
    for (std::size_t i = a.size(); i-- > 0;) {
      if (a[i] == 0.0) continue;
      x[k] = -a[i];
      w[k++] = wt[i];
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      x[k] = a[i];
      w[k++] = wt[i];
    }
  }
};

template <int N>
const gauss_rule<N>& gauss() {
  static const gauss_rule<N> r;
  return r;
}

// Gauss panels on [a,b] with at most `width` per panel; f(x, weight).
template <int N, class F>
void gauss_panels(double a, double b, double width, F&& f) {
  if (!(b > a)) return;
  const auto& g = gauss<N>();
  const int np = std::max(1, static_cast<int>(std::ceil((b - a) / width)));
  const double step = (b - a) / np;
  for (int p = 0; p < np; ++p) {
    const double lo = a + p * step, half = 0.5 * step, mid = lo + half;
    for (int k = 0; k < N; ++k) f(mid + half * g.x[k], half * g.w[k]);
  }
}

// Same, in the variable ln y: f(y, dy-weight).
template <int N, class F>
void log_panels(double A, double B, double width, F&& f) {
  if (!(B > A) || !(A > 0.0)) return;
  gauss_panels<N>(std::log(A), std::log(B), width, [&](double t, double w) {
    const double y = std::exp(t);
    f(y, w * y);
  });
}

inline double sq(double x) { return x * x; }

inline bool approx_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

}  // namespace kwt

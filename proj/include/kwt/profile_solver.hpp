#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "core.hpp"
#include "grid_measure.hpp"
#include "interp.hpp"
#include "secdiff.hpp"

namespace kwt {

enum class normalization { rho_norm_one, mass_one };

inline const char* to_string(normalization n) { return n == normalization::rho_norm_one ? "rho_norm_one" : "mass_one"; }

inline double tail_constant(double rho) { return (2.0 - rho) * (rho - 1.0); }

// For ρ < 2: spacing ≈ 0.0225 in ln x down to 1e-6. The flux balance at large r is a small
// difference of two terms growing like r^{2−ρ}, so it needs the finer spacing once ρ nears 2;
// x_min below 1e-6 no longer changes it. ρ = 2: spacing ≈ 0.024.
inline grid_spec default_profile_grid(double rho) {
  check_rho(rho);
  if (rho < 2.0) return {1e-6, 1e6, 1227};
  return {1e-4, 30.0, 512};
}

struct iteration_record {
  int iter = 0;
  double max_residual = 0.0;
  double max_update = 0.0;
  double dtau = 0.0;
};

struct solver_path {
  std::string method;
  std::vector<iteration_record> history;
  // continuation schedule (relaxation only)
  std::vector<double> eps_schedule, a_schedule;
  std::vector<double> stage_residual;
  std::vector<int> stage_steps;
  int clamp_count = 0;
  bool clamp_warning = false;
  bool converged = false;
};

struct profile_solution {
  double rho = 1.5;
  grid_measure phi;
  normalization norm = normalization::rho_norm_one;
  double residual_weak = std::nan("");
  double residual_strong = std::nan("");
  solver_path path;
};

inline closure_spec profile_closure(double rho) { return closure_spec::for_rho(rho); }

inline log_hermite profile_interp(double rho, const grid_measure& phi) { return make_interp(phi, profile_closure(rho)); }

inline grid_measure seed_profile(double rho, const grid_spec& g) {
  check_rho(rho);
  g.validate();
  if (rho < 2.0) {
    const double K = tail_constant(rho);
    return grid_measure::from_function(g, [&](double x) { return K * std::pow(x, -rho); });
  }
  auto mu = grid_measure::from_function(g, [](double x) { return std::exp(-x); });
  const double m = total_mass(mu);
  for (double& v : mu.density) v /= m;
  return mu;
}

// Discretized strong equation  −(1/ρ)xΦ' − Φ = C[Φ]  in the unknowns u = ln Φ at the nodes,
// with kernel weight g(x) = Φ(x) x/(x+ε)^{3/2}  (ε = 0 gives Φ/√x).
class profile_discretization {
 public:
  struct options {
    double delta = 1e-3;     // Taylor region y < δx
    double tail_far = 1e8;   // outer limit of the far-field integral, in units of x_max
    double eps = 0.0;
  };

  profile_discretization(double rho, const grid_spec& g) : profile_discretization(rho, g, options{}) {}
  profile_discretization(double rho, const grid_spec& g, options o)
      : rho_(rho), opt_(o), L_(g, profile_closure(rho)) {
    check_rho(rho);
  }

  double rho() const { return rho_; }
  const log_hermite& interp() const { return L_; }
  int n() const { return L_.n(); }

  double wk(double z) const { return opt_.eps == 0.0 ? 1.0 / std::sqrt(z) : z / std::pow(z + opt_.eps, 1.5); }
  double ln_wk(double tz, double z) const {
    return opt_.eps == 0.0 ? -0.5 * tz : tz - 1.5 * std::log(z + opt_.eps);
  }

  // E_i = −d_i/ρ − 1 − C_i/Φ_i and optionally its Jacobian.
  void residual(const std::vector<double>& u, std::vector<double>& E, std::vector<double>* C_out,
                Eigen::MatrixXd* J) {
    L_.set(u);
    const int N = n();
    E.assign(N, 0.0);
    if (C_out) C_out->assign(N, 0.0);
    if (J) J->setZero(N, N);
    parallel_for(static_cast<std::size_t>(N), [&](std::size_t ii) {
      const int i = static_cast<int>(ii);
      thread_local grad_acc acc;
      thread_local grad_acc accm;
      thread_local std::vector<double> row;
      if (J) {
        if (static_cast<int>(acc.gu.size()) != N) acc = grad_acc(N), accm = grad_acc(N);
        acc.clear();
        accm.clear();
      }
      const double C = row_collision(i, J ? &acc : nullptr, J ? &accm : nullptr);
      const double phi = std::exp(u[i]);
      const double d = L_.d()[i];
      E[i] = -d / rho_ - 1.0 - C / phi;
      if (C_out) (*C_out)[i] = C;
      if (J) {
        row.assign(N, 0.0);
        // ∂C/∂u from the sampled points
        L_.gradient_row(acc, row.data());
        // Taylor term: m·g''(x_i) with g'' = g_x F(d, dd)
        const auto [gpp, m, F, Gp] = taylor_parts(i);
        (void)F;
        // gpp·∂m: accm holds Σ Mw g(My) ∇ln Φ(My)
        std::vector<double> rowm(N, 0.0);
        L_.gradient_row(accm, rowm.data());
        for (int j = 0; j < N; ++j) row[j] += gpp * rowm[j];
        // m·∂gpp: gpp = gx·F, ∂gx = gx e_i, ∂F = ((2Gp−1)D_i + D2_i)/x²
        const double x = L_.x()[i], gx = phi * wk(x);
        row[i] += m * gpp;
        for (const auto& [j, w] : L_.D()[i].e) row[j] += m * gx * (2.0 * Gp - 1.0) * w / (x * x);
        for (const auto& [j, w] : L_.D2()[i].e) row[j] += m * gx * w / (x * x);
        for (int j = 0; j < N; ++j) (*J)(i, j) = -row[j] / phi;
        for (const auto& [j, w] : L_.D()[i].e) (*J)(i, j) -= w / rho_;
        (*J)(i, i) += C / phi;
      }
    });
  }

  // trapezoid mass plus the left closure 2Φ₀x₀; gradient w.r.t. u
  double mass(const std::vector<double>& u, std::vector<double>* grad) const {
    const auto w = L_.grid().weights();
    std::vector<double> t(u.size());
    if (grad) grad->assign(u.size(), 0.0);
    for (std::size_t i = 0; i < u.size(); ++i) {
      t[i] = w[i] * std::exp(u[i]);
      if (grad) (*grad)[i] = t[i];
    }
    const double left = 2.0 * std::exp(u[0]) * L_.x()[0];
    if (grad) (*grad)[0] += left;
    return pairwise_sum(t) + left;
  }

 private:
  struct taylor_t {
    double gpp, m, F, Gp;
  };

  // g''(x_i) from the cached log-slopes and the moment ∫₀^{δx} y² g(y) dy.
  taylor_t taylor_parts(int i) const {
    const double x = L_.x()[i];
    const double phi = std::exp(L_.u()[i]);
    const double gx = phi * wk(x);
    const double e = opt_.eps;
    const double Gp = L_.d()[i] + 1.0 - 1.5 * x / (x + e);
    const double G2 = L_.dd()[i] - 1.5 * x * e / sq(x + e);
    const double F = (G2 + Gp * Gp - Gp) / (x * x);
    double m = 0.0;
    std::vector<double> parts;
    log_panels<4>(x * opt_.delta * 1e-6, x * opt_.delta, 1.0, [&](double y, double w) {
      const double ty = std::log(y);
      parts.push_back(w * y * y * std::exp(L_.ln_eval_t(ty, y) + ln_wk(ty, y)));
    });
    m = pairwise_sum(parts);
    return {gx * F, m, F, Gp};
  }

  double row_collision(int i, grad_acc* acc, grad_acc* accm) const {
    const double x = L_.x()[i], tx = std::log(x), h = L_.h(), xmax = L_.x().back();
    std::vector<double> parts;
    parts.reserve(8192);
    auto lng = [&](double tz, double z, double coef) {
      return (acc ? L_.ln_eval_acc(tz, z, coef, *acc) : L_.ln_eval_t(tz, z)) + ln_wk(tz, z);
    };
    // pair term W g(P) g(Q); the Jacobian weight is the product itself
    auto pair = [&](double ty, double y, double tq, double q, double W) {
      if (!acc) {
        parts.push_back(W * std::exp(lng(ty, y, 0.0) + lng(tq, q, 0.0)));
        return;
      }
      const double v = W * std::exp(L_.ln_eval_t(ty, y) + ln_wk(ty, y) + L_.ln_eval_t(tq, q) + ln_wk(tq, q));
      L_.ln_eval_acc(ty, y, v, *acc);
      L_.ln_eval_acc(tq, q, v, *acc);
      parts.push_back(v);
    };
    // near-diagonal: y ∈ [δx, x/2], bracket g(x+y)+g(x−y)−2g(x)
    auto near = [&](double y, double w) {
      const double ty = std::log(y);
      pair(ty, y, std::log(x + y), x + y, w);
      pair(ty, y, std::log(x - y), x - y, w);
      pair(ty, y, tx, x, -2.0 * w);
    };
    const double split = x * std::min(h, 0.5);
    log_panels<4>(x * opt_.delta, split, 0.5, near);
    if (h < 0.5) log_panels<4>(split, 0.5 * x, 0.5 * h, near);
    // far field: y ∈ [x/2, ∞), g(y) g(x+y)
    auto far = [&](double y, double w) { pair(std::log(y), y, std::log(x + y), x + y, w); };
    if (0.5 * x < xmax) log_panels<4>(0.5 * x, xmax, h, far);
    log_panels<4>(std::max(xmax, 0.5 * x), xmax * opt_.tail_far, 0.5, far);
    // loss: −2 g(x) ∫_{x/2}^{x} g
    log_panels<4>(0.5 * x, x, 0.5 * h, [&](double y, double w) { pair(std::log(y), y, tx, x, -2.0 * w); });
    double C = pairwise_sum(parts);
    // Taylor region
    const auto tp = taylor_parts(i);
    if (accm) {
      log_panels<4>(x * opt_.delta * 1e-6, x * opt_.delta, 1.0, [&](double y, double w) {
        const double ty = std::log(y);
        const double v = w * y * y * std::exp(L_.ln_eval_t(ty, y) + ln_wk(ty, y));
        L_.ln_eval_acc(ty, y, v, *accm);
      });
    }
    C += tp.gpp * tp.m;
    return C;
  }

  double rho_;
  options opt_;
  log_hermite L_;
};

struct ptc_options {
  double damping = 0.3;   // caps the first pseudo-time step
  int max_iter = 300;
  double tol = 1e-9;      // sup of the ln Φ update at a Newton-like step
  double res_tol = 1e-8;  // max |E| accepted outright
  double row_weight = 100.0;
  double dtau_max = 1e8;
  std::function<void(const iteration_record&)> on_iter;
};

namespace detail {
inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double a : v) m = std::max(m, std::abs(a));
  return m;
}
inline double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double a : v) s += a * a;
  return std::sqrt(s / static_cast<double>(v.size()));
}
}  // namespace detail

// Newton iteration with pseudo-transient continuation on the discretized equation,
// augmented with the normalization row (least-squares solve of the (N+1)×N system).
inline profile_solution direct_iterate(double rho, const grid_measure& seed, const ptc_options& opt = {},
                                       profile_discretization::options dopt = {}) {
  check_rho(rho);
  if (!(opt.damping > 0.0 && opt.damping <= 1.0)) throw parameter_error("damping must lie in (0,1]");
  if (opt.max_iter < 1) throw parameter_error("max_iter must be positive");
  for (std::size_t i = 0; i < seed.size(); ++i)
    if (!(seed.density[i] > 0.0)) throw domain_error("direct_iterate: seed must be strictly positive");
  profile_discretization disc(rho, seed.grid, dopt);
  const int N = disc.n();
  std::vector<double> u(N);
  for (int i = 0; i < N; ++i) u[i] = std::log(seed.density[i]);
  const bool mass_norm = rho >= 2.0;
  const double target = mass_norm ? 1.0 : std::log(tail_constant(rho)) - rho * std::log(seed.grid.x_max);

  profile_solution sol;
  sol.rho = rho;
  sol.norm = mass_norm ? normalization::mass_one : normalization::rho_norm_one;
  sol.path.method = "newton_ptc";
  double dtau = opt.damping >= 1.0 ? opt.dtau_max : std::min(opt.dtau_max, 0.1 * opt.damping / (1.0 - opt.damping));
  double prev_rms = -1.0;
  int growth = 0;
  double prev_max = std::numeric_limits<double>::infinity(), first_max = 0.0;
  std::vector<double> E, mg;
  Eigen::MatrixXd J;
  for (int it = 0; it < opt.max_iter; ++it) {
    disc.residual(u, E, nullptr, &J);
    const double r = detail::rms(E), rmax = detail::max_abs(E);
    if (prev_rms > 0.0) dtau = std::min(opt.dtau_max, dtau * prev_rms / r);
    prev_rms = r;
    Eigen::MatrixXd A(N + 1, N);
    A.topRows(N) = J;
    for (int i = 0; i < N; ++i) A(i, i) += 1.0 / dtau;
    Eigen::VectorXd b(N + 1);
    for (int i = 0; i < N; ++i) b(i) = -E[i];
    A.row(N).setZero();
    if (mass_norm) {
      const double m = disc.mass(u, &mg);
      for (int j = 0; j < N; ++j) A(N, j) = opt.row_weight * mg[j];
      b(N) = -opt.row_weight * (m - target);
    } else {
      A(N, N - 1) = opt.row_weight;
      b(N) = -opt.row_weight * (u[N - 1] - target);
    }
    const Eigen::VectorXd du = A.householderQr().solve(b);
    double dmax = 0.0;
    for (int i = 0; i < N; ++i) {
      u[i] += du(i);
      dmax = std::max(dmax, std::abs(du(i)));
    }
    if (!std::isfinite(dmax)) throw compute_error("direct_iterate: non-finite update at iteration " + std::to_string(it));
    iteration_record rec{it, rmax, dmax, dtau};
    sol.path.history.push_back(rec);
    if (opt.on_iter) opt.on_iter(rec);
    // transient growth is normal while Δτ is small; count it only near the Newton limit
    growth = (rmax > prev_max && dtau >= 1e4) ? growth + 1 : 0;
    prev_max = rmax;
    if (it == 0) first_max = rmax;
    if (growth >= 10 || rmax > 1e6 * std::max(1.0, first_max)) {
      sol.phi = grid_measure::zero(seed.grid);
      throw compute_error("direct_iterate: residual diverged (last max residual " +
                          std::to_string(rmax) + ")");
    }
    if (rmax < opt.res_tol || (dmax < opt.tol && dtau >= 1e4)) {
      sol.path.converged = true;
      break;
    }
  }
  std::vector<double> d(N);
  for (int i = 0; i < N; ++i) d[i] = std::exp(u[i]);
  sol.phi = grid_measure(seed.grid, std::move(d));
  return sol;
}

// ---------------------------------------------------------------------------
// Independent evaluation of the collision term on the interpolated profile:
// 8-point Gauss panels in ln y, no small-y expansion. `refine` divides the panel widths.

inline double collision_rhs(const log_hermite& L, double x, int refine = 1) {
  const double xmax = L.x().back(), h = L.h() / refine;
  auto g = [&](double z) { return L.eval(z) / std::sqrt(z); };
  const double gx = g(x), lx = std::log(x), l2 = std::log(2.0);
  std::vector<double> parts;
  auto add = [&](double s0, double s1, double width, auto&& f) {
    double acc = 0.0;
    gauss_panels<8>(s0, s1, width, [&](double s, double w) { acc += w * f(std::exp(s)); });
    parts.push_back(acc);
  };
  auto near = [&](double y) { return y * g(y) * (g(x + y) + g(x - y) - 2.0 * gx); };
  auto far = [&](double y) { return y * g(y) * g(x + y); };
  const double s_split = lx + std::log(std::min(0.5, 4.0 * L.h()));
  add(lx - 30.0, s_split, 0.5 / refine, near);
  add(s_split, lx - l2, h, near);
  const double s_top = std::log(std::max(xmax, x) * 1e10), s_max = std::log(xmax);
  if (lx - l2 < s_max) add(lx - l2, s_max, h, far);
  add(std::max(s_max, lx - l2), s_top, 0.25 / refine, far);
  double loss = 0.0;
  gauss_panels<8>(lx - l2, lx, h, [&](double s, double w) {
    const double y = std::exp(s);
    loss += w * y * g(y);
  });
  parts.push_back(-2.0 * gx * loss);
  return pairwise_sum(parts);
}

inline double collision_rhs(double rho, const grid_measure& phi, double x) {
  check_rho(rho);
  if (!(x >= phi.grid.x_min && x <= phi.grid.x_max)) throw parameter_error("collision_rhs: x outside the grid");
  if (all_zero(phi)) return 0.0;
  return collision_rhs(profile_interp(rho, phi), x);
}

struct strong_residual_result {
  double max_rel = 0.0;
  std::size_t argmax = 0;
  std::vector<double> per_node;
};

inline strong_residual_result strong_residual_detail(double rho, const grid_measure& phi) {
  check_rho(rho);
  strong_residual_result r;
  const std::size_t N = phi.size();
  r.per_node.assign(N, 0.0);
  if (all_zero(phi)) return r;
  const auto L = profile_interp(rho, phi);
  parallel_for(N - 6, [&](std::size_t k) {
    const std::size_t i = k + 3;
    const double x = L.x()[i], p = phi.density[i];
    const double C = collision_rhs(L, x);
    const double lhs = -p * L.d()[i] / rho - p;
    r.per_node[i] = std::abs(lhs - C) / (p + std::numeric_limits<double>::min());
  });
  for (std::size_t i = 3; i + 3 < N; ++i)
    if (r.per_node[i] > r.max_rel) r.max_rel = r.per_node[i], r.argmax = i;
  return r;
}

inline double strong_residual(double rho, const grid_measure& phi) { return strong_residual_detail(rho, phi).max_rel; }

// ---------------------------------------------------------------------------
// Weak form: (1/ρ)∫(xφ' − (ρ−1)(φ − φ(0)))Φ = ∬_{x>y} g(x)g(y)Δ²_yφ(x), g = Φ/√x.

struct test_function {
  std::string name;
  std::function<double(double)> f, df, d2f;
  double lo = 0.0, hi = 0.0;  // support is [lo, hi] (lo = 0 for caps)
  std::vector<double> kinks;  // points where φ'' jumps
};

// B((ln x − ln c)/ln κ) with B(s) = exp(−1/(1−s²))
inline test_function log_bump(double c, double kappa) {
  test_function t;
  const double lk = std::log(kappa);
  auto B = [](double s, int k) {
    if (std::abs(s) >= 1.0) return 0.0;
    const double q = 1.0 - s * s, e = std::exp(-1.0 / q);
    if (k == 0) return e;
    const double b1 = -2.0 * s / (q * q);  // d/ds(−1/q)
    if (k == 1) return e * b1;
    const double b2 = -2.0 / (q * q) - 8.0 * s * s / (q * q * q);
    return e * (b1 * b1 + b2);
  };
  t.name = "bump(c=" + fmt17(c) + ",kappa=" + fmt17(kappa) + ")";
  t.f = [=](double x) { return x > 0.0 ? B((std::log(x) - std::log(c)) / lk, 0) : 0.0; };
  t.df = [=](double x) { return x > 0.0 ? B((std::log(x) - std::log(c)) / lk, 1) / (lk * x) : 0.0; };
  t.d2f = [=](double x) {
    if (!(x > 0.0)) return 0.0;
    const double s = (std::log(x) - std::log(c)) / lk;
    return (B(s, 2) / (lk * lk) - B(s, 1) / lk) / (x * x);
  };
  t.lo = c / kappa;
  t.hi = c * kappa;
  return t;
}

// (r − x)₊ with the corner replaced by a quadratic on [r(1−δ), r(1+δ)]
inline test_function smoothed_cap(double r, double delta = 0.25) {
  test_function t;
  const double a = r * (1.0 - delta), b = r * (1.0 + delta);
  t.name = "cap(r=" + fmt17(r) + ")";
  t.f = [=](double x) {
    if (x <= a) return r - x;
    if (x >= b) return 0.0;
    return sq(b - x) / (4.0 * r * delta);
  };
  t.df = [=](double x) {
    if (x <= a) return -1.0;
    if (x >= b) return 0.0;
    return -(b - x) / (2.0 * r * delta);
  };
  t.d2f = [=](double x) { return (x > a && x < b) ? 1.0 / (2.0 * r * delta) : 0.0; };
  t.lo = 0.0;
  t.hi = b;
  t.kinks = {a, b};
  return t;
}

// 8 bumps at staggered scales plus 2 caps, placed inside the grid's resolved range.
inline std::vector<test_function> default_battery(const grid_spec& g) {
  std::vector<test_function> out;
  const double lo = std::log(g.x_min) + 2.0 * std::log(10.0), hi = std::log(g.x_max) - 2.0 * std::log(10.0);
  for (int k = 0; k < 8; ++k) {
    const double c = std::exp(lo + (hi - lo) * k / 7.0);
    out.push_back(log_bump(c, k % 2 == 0 ? 4.0 : 10.0));
  }
  out.push_back(smoothed_cap(std::exp(lo + 0.35 * (hi - lo))));
  out.push_back(smoothed_cap(std::exp(lo + 0.65 * (hi - lo))));
  return out;
}

struct weak_parts {
  double lhs = 0.0, rhs = 0.0, scale = 0.0;
};

namespace detail {

// ∫_a^b f(x) dx in s = ln x: 8-point Gauss panels of width ≤ `width`, breakpoints honoured.
template <class F>
double log_integral(F&& f, double a, double b, const std::vector<double>& kinks, double width) {
  if (!(b > a) || !(a > 0.0)) return 0.0;
  std::vector<double> br{std::log(a), std::log(b)};
  for (double k : kinks)
    if (k > a && k < b) br.push_back(std::log(k));
  std::sort(br.begin(), br.end());
  std::vector<double> parts;
  for (std::size_t k = 0; k + 1 < br.size(); ++k) {
    if (!(br[k + 1] > br[k])) continue;
    double acc = 0.0;
    gauss_panels<8>(br[k], br[k + 1], width, [&](double s, double w) {
      const double x = std::exp(s);
      acc += w * x * f(x);
    });
    parts.push_back(acc);
  }
  return pairwise_sum(parts);
}

}  // namespace detail

// Profile given through a callable density with the range used for (0,∞).
struct density_view {
  std::function<double(double)> phi;
  double x_lo = 1e-8, x_hi = 1e12;
  std::vector<double> kinks;
};

inline density_view view_of(const log_hermite& L) {
  density_view v;
  auto Lp = std::make_shared<log_hermite>(L);
  v.phi = [Lp](double x) { return Lp->eval(x); };
  v.x_lo = L.x().front() * 1e-8;
  v.x_hi = L.closure().exponential_tail ? L.x().back() + 80.0 / std::max(1e-300, -L.tail_slope_x())
                                        : L.x().back() * 1e12;
  v.kinks = {L.x().front(), L.x().back()};
  return v;
}

inline weak_parts weak_form_parts(const density_view& P, double rho, const test_function& tf, double width = 0.1) {
  weak_parts out;
  const double phi0 = tf.f(0.0);
  std::vector<double> kinks = P.kinks;
  for (double k : tf.kinks) kinks.push_back(k);
  if (tf.lo > 0.0) kinks.push_back(tf.lo);
  kinks.push_back(tf.hi);
  auto lhs_f = [&](double x) { return (x * tf.df(x) - (rho - 1.0) * (tf.f(x) - phi0)) * P.phi(x); };
  auto scl_f = [&](double x) {
    return (std::abs(x * tf.df(x)) + (rho - 1.0) * std::abs(tf.f(x) - phi0)) * P.phi(x);
  };
  const double lhs_hi = phi0 == 0.0 ? tf.hi : P.x_hi;
  const double lhs_lo = tf.lo > 0.0 ? tf.lo : P.x_lo;
  out.lhs = detail::log_integral(lhs_f, lhs_lo, lhs_hi, kinks, width) / rho;
  out.scale = detail::log_integral(scl_f, lhs_lo, lhs_hi, kinks, width) / rho;

  auto g = [&](double z) { return z > 0.0 ? P.phi(z) / std::sqrt(z) : 0.0; };
  const double a = tf.lo, b = tf.hi;
  const double y_taylor = 1e-4 * (a > 0.0 ? a : b);
  std::vector<double> kk;
  auto inner = [&](double y) {
    if (y < y_taylor) {
      // Δ²_y φ(x) ≈ y² φ''(x)
      auto f2 = [&](double x) { return g(x) * tf.d2f(x); };
      return y * y * detail::log_integral(f2, std::max(y, a > 0.0 ? a : y), b, kinks, width);
    }
    if (a > 0.0 && y >= a) {
      // shifts comparable to the support: integrate each term in its own argument so the
      // test function stays resolved when ln((b+y)/y) is tiny
      auto shifted = [&](double sgn) {
        kk = kinks;
        for (double k : P.kinks) kk.push_back(k - sgn * y);
        if (sgn < 0.0) kk.push_back(2.0 * y);
        const double lo = sgn < 0.0 ? std::max(a, 2.0 * y) : a;
        return detail::log_integral([&](double u) { return g(u + sgn * y) * tf.f(u); }, lo, b, kk, width);
      };
      const double own = detail::log_integral([&](double x) { return g(x) * tf.f(x); }, std::max(a, y), b,
                                              [&] {
                                                auto k2 = kinks;
                                                k2.push_back(y);
                                                return k2;
                                              }(),
                                              width);
      return shifted(-1.0) + shifted(1.0) - 2.0 * own;
    }
    auto f = [&](double x) { return g(x) * delta2(tf.f, x, y); };
    const double lo = std::max(y, a - y), hi = b + y;
    if (!(hi > lo)) return 0.0;
    kk = kinks;
    for (double k : {a - y, b - y, a + y, b + y}) kk.push_back(k);
    for (double k : tf.kinks) kk.push_back(k + y), kk.push_back(k - y);
    return detail::log_integral(f, lo, hi, kk, width);
  };
  std::vector<double> ykinks = P.kinks;
  for (double k : tf.kinks) ykinks.push_back(k);
  ykinks.push_back(b);
  ykinks.push_back(y_taylor);
  if (a > 0.0) ykinks.push_back(a);
  out.rhs = detail::log_integral([&](double y) { return g(y) * inner(y); }, P.x_lo, P.x_hi, ykinks, width);
  return out;
}

inline double weak_residual(double rho, const grid_measure& phi, const std::vector<test_function>& battery,
                            std::vector<weak_parts>* detail_out = nullptr) {
  check_rho(rho);
  if (detail_out) detail_out->assign(battery.size(), {});
  if (all_zero(phi)) return 0.0;
  const auto L = profile_interp(rho, phi);
  const auto view = view_of(L);
  std::vector<weak_parts> parts(battery.size());
  parallel_for(battery.size(), [&](std::size_t k) { parts[k] = weak_form_parts(view, rho, battery[k]); });
  double worst = 0.0;
  for (const auto& p : parts) {
    if (p.scale == 0.0) continue;
    worst = std::max(worst, std::abs(p.lhs - p.rhs) / p.scale);
  }
  if (detail_out) *detail_out = parts;
  return worst;
}

inline double weak_residual(double rho, const grid_measure& phi) {
  return weak_residual(rho, phi, default_battery(phi.grid));
}

// Dilation Φ(cx) with c = n^{1/ρ}, n the tail-closed ‖xΦ‖_ρ, so that the result has ‖xΦ‖_ρ = 1.
inline grid_measure normalize_rho_norm(double rho, const grid_measure& phi) {
  if (!(rho > 1.0 && rho < 2.0)) throw parameter_error("normalize_rho_norm: rho must lie in (1,2)");
  std::vector<double> d(phi.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = phi.x(i) * phi.density[i];
  const double n = rho_norm_tail_closed(grid_measure(phi.grid, std::move(d)), rho).value;
  if (!(n > 0.0)) return phi;
  return rescale(phi, std::pow(n, 1.0 / rho));
}

// Direct solve; for ρ < 2 the tail-pinned solution is dilated to unit ρ-norm.
inline profile_solution solve_profile(double rho, const grid_spec& g, const ptc_options& opt = {}) {
  auto sol = direct_iterate(rho, seed_profile(rho, g), opt);
  if (rho < 2.0) sol.phi = normalize_rho_norm(rho, sol.phi);
  sol.residual_strong = strong_residual(rho, sol.phi);
  sol.residual_weak = weak_residual(rho, sol.phi);
  return sol;
}

}  // namespace kwt

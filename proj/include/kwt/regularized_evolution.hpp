#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "core.hpp"
#include "grid_measure.hpp"

namespace kwt {

struct evolution_params {
  double rho = 1.5;
  double epsilon = 0.5;
  double a = 0.1;
  grid_spec grid{1e-4, 1e4, 512};
  double dt = 0.0;  // macro-step; 0 selects one node shift (ρh). Rounded to a multiple of ρh.
  double picard_tol = 1e-12;
  int picard_max_iter = 60;
  int picard_mesh = 4;      // trapezoid intervals per Picard window
  double window_cap = 0.0;  // 0: contraction horizon from the a-priori bound
  double R0 = 1.0;          // reference scale of the lower-bound margin

  void validate() const {
    if (!(rho > 1.0 && rho < 2.0)) throw parameter_error("evolution: rho must lie in (1,2)");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw parameter_error("evolution: epsilon must be positive");
    if (!(a > 0.0 && a < 0.5 * epsilon)) throw parameter_error("evolution: need 0 < a < epsilon/2");
    grid.validate();
    const double spacing = epsilon * std::expm1(grid.h());
    if (2.0 * a < 8.0 * spacing)
      throw parameter_error("evolution: mollifier width a spans fewer than 8 grid spacings at x = epsilon");
    if (!(dt >= 0.0) || !std::isfinite(dt)) throw parameter_error("evolution: dt must be nonnegative");
    if (!(picard_tol > 0.0)) throw parameter_error("evolution: picard_tol must be positive");
    if (picard_max_iter < 1) throw parameter_error("evolution: picard_max_iter must be positive");
    if (picard_mesh < 1) throw parameter_error("evolution: picard_mesh must be positive");
    if (!(window_cap >= 0.0)) throw parameter_error("evolution: window_cap must be nonnegative");
    if (!(R0 > 0.0)) throw parameter_error("evolution: R0 must be positive");
  }
  int shift() const {
    if (dt == 0.0) return 1;
    return std::max(1, static_cast<int>(std::lround(dt / (rho * grid.h()))));
  }
  double step() const { return rho * grid.h() * shift(); }
};

// ---------------------------------------------------------------------------
// Mollifier C·exp(−1/(1−z²)) on (−1,1), scaled to width b.

namespace detail {
inline double bump_raw(double z) { return std::abs(z) >= 1.0 ? 0.0 : std::exp(-1.0 / (1.0 - z * z)); }
inline double bump_norm() {
  static const double c = [] {
    boost::math::quadrature::tanh_sinh<double> ts;
    return 1.0 / ts.integrate(bump_raw, -1.0, 1.0);
  }();
  return c;
}
}  // namespace detail

inline double mollifier(double a, double x) {
  if (!(a > 0.0)) throw parameter_error("mollifier: width must be positive");
  return detail::bump_norm() * detail::bump_raw(x / a) / a;
}

// A-priori contraction factor K(T) for ‖H0‖_ρ = E0.
inline double contraction_bound(double rho, double eps, double T, double E0 = 1.0) {
  const double q = (rho - 1.0) / rho, c = std::pow(2.0, rho);
  return c / (eps * eps) * T * std::exp(T * q) * E0 * (1.0 + 4.0 * (c / std::pow(eps, rho) * T * E0 + std::exp(-T * q)));
}

// Largest T with K(T) ≤ target (K is increasing in T).
inline double contraction_horizon(double rho, double eps, double E0 = 1.0, double target = 0.5) {
  double lo = 0.0, hi = 1.0;
  while (contraction_bound(rho, eps, hi, E0) < target) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (contraction_bound(rho, eps, mid, E0) <= target ? lo : hi) = mid;
  }
  return lo;
}

// ---------------------------------------------------------------------------
// Discrete collision operators on a fixed log grid. The measure H is represented
// by trapezoid weights w_i H_i at the nodes. Every ordered pair X_i ≥ Y_j (the
// diagonal with weight 1/2) carries W_ij = E·w_i w_j H_i C_j/((X_i+εE)(Y_j+εE))^{3/2},
// C = φ_{aE}∗H. Loss removes 2X_i W_ij at X_i; gain deposits zW_ij at z = X_i ± Y_j
// split between the bracketing nodes so that F(z)=zψ(z) is linearly interpolated.
// Mass is conserved exactly up to the outflow beyond x_max, and concave F gives a
// nonpositive discrete second difference.

struct gain_result {
  std::vector<double> density;
  double outflow = 0.0;
};

class collision_operator {
 public:
  static constexpr std::size_t chunks = 32;  // fixed reduction layout, independent of the thread count

  collision_operator(double rho, double eps, double a, const grid_spec& g)
      : rho_(rho), eps_(eps), a_(a), g_(g), x_(g.nodes()), w_(g.weights()) {
    const std::size_t N = g.n;
    const double t0 = g.t0(), h = g.h();
    auto locate = [&](double z) {
      slot s;
      if (z <= 0.0) {
        s.k = -1;
        s.lam = 0.0;
      } else if (z < x_[0]) {
        s.k = -1;
        s.lam = 1.0;
      } else if (z > x_[N - 1] * (1.0 + 1e-14)) {
        s.k = -2;
      } else {
        long k = static_cast<long>(std::floor((std::log(z) - t0) / h));
        k = std::clamp<long>(k, 0, static_cast<long>(N) - 2);
        while (k > 0 && z < x_[k]) --k;
        while (k + 2 < static_cast<long>(N) && z > x_[k + 1]) ++k;
        s.k = static_cast<int>(k);
        s.lam = std::clamp((x_[k + 1] - z) / (x_[k + 1] - x_[k]), 0.0, 1.0);
      }
      return s;
    };
    row_start_.resize(N + 1);
    for (std::size_t i = 0; i < N; ++i) row_start_[i + 1] = row_start_[i] + i + 1;
    plus_.resize(row_start_[N]);
    minus_.resize(row_start_[N]);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        plus_[row_start_[i] + j] = locate(x_[i] + x_[j]);
        minus_[row_start_[i] + j] = i == j ? slot{-1, 0.0} : locate(x_[i] - x_[j]);
      }
  }

  const grid_spec& grid() const { return g_; }
  double dilation(double s) const { return std::exp(s / rho_); }

  // (φ_{aE}∗H) at the nodes; H linear in x between nodes and zero outside the grid.
  std::vector<double> convolve(const std::vector<double>& H, double s) const {
    const double b = a_ * dilation(s);
    const std::size_t N = g_.n;
    std::vector<double> C(N);
    auto Hlin = [&](double z) {
      if (z < x_[0] || z > x_[N - 1]) return 0.0;
      const double t = (std::log(z) - g_.t0()) / g_.h();
      std::size_t k = std::min<std::size_t>(N - 2, static_cast<std::size_t>(std::max(0.0, std::floor(t))));
      while (k > 0 && z < x_[k]) --k;
      while (k + 2 < N && z > x_[k + 1]) ++k;
      const double f = (z - x_[k]) / (x_[k + 1] - x_[k]);
      return H[k] + f * (H[k + 1] - H[k]);
    };
    parallel_for(N, [&](std::size_t j) {
      double acc = 0.0;
      gauss_panels<30>(x_[j] - b, x_[j] + b, 2.0 * b,
                       [&](double z, double wq) { acc += wq * mollifier(b, x_[j] - z) * Hlin(z); });
      C[j] = acc;
    });
    return C;
  }

  // Collision part of A (without the −(ρ−1)/ρ shift) at the nodes.
  std::vector<double> loss_rate(const std::vector<double>& C, double s) const {
    const double E = dilation(s), eE = eps_ * E;
    const std::size_t N = g_.n;
    std::vector<double> out(N);
    double prefix = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double q = w_[i] * C[i] / std::pow(x_[i] + eE, 1.5);
      out[i] = 2.0 * x_[i] * E / std::pow(x_[i] + eE, 1.5) * (prefix + 0.5 * q);
      prefix += q;
    }
    return out;
  }

  gain_result gain(const std::vector<double>& H, const std::vector<double>& C, double s) const {
    const double E = dilation(s), eE = eps_ * E;
    const std::size_t N = g_.n;
    std::vector<double> p(N), q(N);
    for (std::size_t i = 0; i < N; ++i) {
      const double d = std::pow(x_[i] + eE, 1.5);
      p[i] = E * w_[i] * H[i] / d;
      q[i] = w_[i] * C[i] / d;
    }
    std::vector<std::vector<double>> part(chunks, std::vector<double>(N + 1, 0.0));
    parallel_for(chunks, [&](std::size_t c) {
      auto& dep = part[c];
      const std::size_t lo = N * c / chunks, hi = N * (c + 1) / chunks;
      auto put = [&](const slot& sl, double z, double W) {
        if (sl.k == -2) {
          dep[N] += z * W;
        } else if (sl.k == -1) {
          dep[0] += z * W;
        } else {
          dep[sl.k] += sl.lam * x_[sl.k] * W;
          dep[sl.k + 1] += (1.0 - sl.lam) * x_[sl.k + 1] * W;
        }
      };
      for (std::size_t i = lo; i < hi; ++i) {
        if (p[i] == 0.0) continue;
        const std::size_t r = row_start_[i];
        for (std::size_t j = 0; j <= i; ++j) {
          if (q[j] == 0.0) continue;
          const double W = (i == j ? 0.5 : 1.0) * p[i] * q[j];
          put(plus_[r + j], x_[i] + x_[j], W);
          if (i != j) put(minus_[r + j], x_[i] - x_[j], W);
        }
      }
    });
    gain_result out;
    out.density.assign(N, 0.0);
    for (std::size_t k = 0; k < N; ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < chunks; ++c) acc += part[c][k];
      out.density[k] = acc / w_[k];
    }
    for (std::size_t c = 0; c < chunks; ++c) out.outflow += part[c][N];
    return out;
  }

  // Σ_{X≥Y} W·2X over the pair table (total interaction mass).
  double pair_mass(const std::vector<double>& H, const std::vector<double>& C, double s) const {
    const auto L = loss_rate(C, s);
    std::vector<double> t(g_.n);
    for (std::size_t i = 0; i < g_.n; ++i) t[i] = w_[i] * H[i] * L[i];
    return pairwise_sum(t);
  }

 private:
  struct slot {
    int k = -1;  // ≥0: left bracketing node; −1: lumped at the first node; −2: outflow
    double lam = 0.0;
  };
  double rho_, eps_, a_;
  grid_spec g_;
  std::vector<double> x_, w_;
  std::vector<std::size_t> row_start_;
  std::vector<slot> plus_, minus_;
};

namespace detail {
inline void check_same_grid(const evolution_params& p, const grid_measure& H, const char* who) {
  if (!(H.grid == p.grid)) throw parameter_error(std::string(who) + ": measure grid differs from the parameter grid");
  if (H.atom != 0.0) throw domain_error(std::string(who) + ": atom at zero is not allowed");
}
}  // namespace detail

// A_a(s)[H](X) for arbitrary X ≥ 0. The Y-integral is exchanged with the convolution:
// ∫₀^X (φ∗H)(Y)/(Y+εE)^{3/2} dY = Σ_k w_k H_k ∫₀^X φ(Y−Z_k)/(Y+εE)^{3/2} dY.
inline double A_op(const evolution_params& p, double s, const grid_measure& H, double X) {
  p.validate();
  detail::check_same_grid(p, H, "A_op");
  if (!(s >= 0.0)) throw parameter_error("A_op: s must be nonnegative");
  if (!(X >= 0.0)) throw parameter_error("A_op: X must be nonnegative");
  const double shift = -(p.rho - 1.0) / p.rho;
  if (X == 0.0) return shift;
  const double E = std::exp(s / p.rho), b = p.a * E, eE = p.epsilon * E;
  const auto w = p.grid.weights();
  std::vector<double> terms(H.size(), 0.0);
  parallel_for(H.size(), [&](std::size_t k) {
    if (H.density[k] == 0.0) return;
    const double Z = H.x(k), lo = std::max(0.0, Z - b), hi = std::min(X, Z + b);
    if (!(hi > lo)) return;
    double acc = 0.0;
    gauss_panels<30>(lo, hi, hi - lo,
                     [&](double y, double wq) { acc += wq * mollifier(b, y - Z) / std::pow(y + eE, 1.5); });
    terms[k] = w[k] * H.density[k] * acc;
  });
  return 2.0 * X * E / std::pow(X + eE, 1.5) * pairwise_sum(terms) + shift;
}

inline grid_measure B_op(const evolution_params& p, double s, const grid_measure& H, double* outflow = nullptr) {
  p.validate();
  detail::check_same_grid(p, H, "B_op");
  if (!(s >= 0.0)) throw parameter_error("B_op: s must be nonnegative");
  collision_operator op(p.rho, p.epsilon, p.a, p.grid);
  const auto C = op.convolve(H.density, s);
  auto g = op.gain(H.density, C, s);
  if (outflow) *outflow = g.outflow;
  return grid_measure(p.grid, std::move(g.density));
}

// ---------------------------------------------------------------------------
// Picard iteration of the mild-solution map on a uniform time mesh.

struct picard_result {
  std::vector<double> times;
  std::vector<grid_measure> family;
  int iterations = 0;
  std::vector<double> increments;  // sup over the mesh of the ρ-norm of successive differences
  double last_factor = 0.0;        // ratio of the last two increments
};

namespace detail {
inline double diff_norm(const grid_spec& g, const std::vector<double>& a, const std::vector<double>& b, double rho) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = std::abs(a[i] - b[i]);
  return rho_norm(grid_measure(g, std::move(d)), rho, 4, false).value;
}

inline picard_result picard_window(const collision_operator& op, double rho, const std::vector<double>& H0, double s0,
                                   double s1, int mesh, double tol, int max_iter) {
  const std::size_t N = H0.size();
  const double q = (rho - 1.0) / rho, ds = (s1 - s0) / mesh;
  picard_result res;
  for (int m = 0; m <= mesh; ++m) res.times.push_back(m == mesh ? s1 : s0 + m * ds);
  std::vector<std::vector<double>> H(mesh + 1, H0), A(mesh + 1), B(mesh + 1);
  bool zero = true;
  for (double v : H0) zero = zero && v == 0.0;
  double prev = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    for (int m = 0; m <= mesh; ++m) {
      const auto C = op.convolve(H[m], res.times[m]);
      A[m] = op.loss_rate(C, res.times[m]);
      for (double& v : A[m]) v -= q;
      B[m] = op.gain(H[m], C, res.times[m]).density;
    }
    std::vector<std::vector<double>> Hn(mesh + 1, std::vector<double>(N));
    std::vector<std::vector<double>> Lam(mesh + 1, std::vector<double>(N, 0.0));
    for (int m = 1; m <= mesh; ++m)
      for (std::size_t i = 0; i < N; ++i) Lam[m][i] = Lam[m - 1][i] + 0.5 * ds * (A[m - 1][i] + A[m][i]);
    parallel_for(N, [&](std::size_t i) {
      Hn[0][i] = H0[i];
      for (int m = 1; m <= mesh; ++m) {
        double v = H0[i] * std::exp(-Lam[m][i]);
        for (int l = 0; l <= m; ++l) {
          const double c = (l == 0 || l == m) ? 0.5 * ds : ds;
          v += c * std::exp(-(Lam[m][i] - Lam[l][i])) * B[l][i];
        }
        Hn[m][i] = v;
      }
    });
    double inc = 0.0;
    for (int m = 1; m <= mesh; ++m) inc = std::max(inc, diff_norm(op.grid(), Hn[m], H[m], rho));
    H.swap(Hn);
    res.iterations = it;
    res.increments.push_back(inc);
    if (it > 1 && prev > 0.0) res.last_factor = inc / prev;
    prev = inc;
    if (zero || inc < tol) {
      for (int m = 0; m <= mesh; ++m) res.family.emplace_back(op.grid(), std::move(H[m]));
      return res;
    }
  }
  throw compute_error("picard_solve: no convergence after " + std::to_string(max_iter) +
                      " iterations (last contraction factor " + fmt17(res.last_factor) + ", last increment " +
                      fmt17(prev) + ")");
}

inline double window_length(const evolution_params& p, double E0) {
  return p.window_cap > 0.0 ? p.window_cap : contraction_horizon(p.rho, p.epsilon, std::max(E0, 1e-300));
}
}  // namespace detail

inline picard_result picard_solve(const evolution_params& p, const grid_measure& H0, double T) {
  p.validate();
  detail::check_same_grid(p, H0, "picard_solve");
  if (!(T > 0.0)) throw parameter_error("picard_solve: T must be positive");
  const double n0 = rho_norm(H0, p.rho).value;
  if (n0 > 1.0 + 1e-12) throw parameter_error("picard_solve: initial rho-norm exceeds 1");
  if (p.window_cap == 0.0 && T > detail::window_length(p, 1.0) * (1.0 + 1e-12))
    throw parameter_error("picard_solve: T exceeds the contraction horizon " + fmt17(detail::window_length(p, 1.0)));
  collision_operator op(p.rho, p.epsilon, p.a, p.grid);
  return detail::picard_window(op, p.rho, H0.density, 0.0, T, p.picard_mesh, p.picard_tol, p.picard_max_iter);
}

// ---------------------------------------------------------------------------
// Semigroup in the dilated frame. A macro-step of length ρmh is a chain of Picard
// windows in H followed by the pullback x = Xe^{−t/ρ}, which is an exact shift by m
// nodes. Characteristics enter through x_max, so the m top nodes receive inflow data:
// the x^{1−ρ} tail with the current top value, which is what the mild solution gives
// beyond the grid once collisions there are neglected (the e^{t(ρ−1)/ρ} growth cancels
// the dilation of the tail).

struct evolution_state {
  grid_measure psi;
  double t = 0.0;
  std::vector<std::pair<double, double>> rho_norm_history;
  std::vector<std::pair<double, double>> lower_bound_margin_history;
  std::vector<std::pair<double, double>> mass_history;
  int picard_iterations = 0;
  double max_contraction_factor = 0.0;
};

class evolution {
 public:
  explicit evolution(const evolution_params& p) : p_(p), op_((p.validate(), p.rho), p.epsilon, p.a, p.grid) {}

  const evolution_params& params() const { return p_; }

  evolution_state start(const grid_measure& psi0) const {
    detail::check_same_grid(p_, psi0, "evolution");
    evolution_state st;
    st.psi = psi0;
    record(st);
    return st;
  }

  // Advance by one macro-step.
  void step(evolution_state& st) const {
    const int m = p_.shift();
    const double dt = p_.step();
    const double E0 = std::max(1.0, norm_of(st.psi)) * std::exp(dt * (p_.rho - 1.0) / p_.rho);
    const int nw = std::max(1, static_cast<int>(std::ceil(dt / detail::window_length(p_, E0) - 1e-12)));
    std::vector<double> H = st.psi.density;
    bool zero = true;
    for (double v : H) zero = zero && v == 0.0;
    if (!zero) {
      for (int k = 0; k < nw; ++k) {
        auto r = detail::picard_window(op_, p_.rho, H, dt * k / nw, dt * (k + 1) / nw, p_.picard_mesh, p_.picard_tol,
                                       p_.picard_max_iter);
        st.picard_iterations += r.iterations;
        st.max_contraction_factor = std::max(st.max_contraction_factor, r.last_factor);
        H = std::move(r.family.back().density);
      }
    }
    const std::size_t N = H.size();
    std::vector<double> out(N);
    const auto x = p_.grid.nodes();
    const double top = st.psi.density[N - 1];
    for (std::size_t i = 0; i < N; ++i) out[i] = i + m < N ? H[i + m] : top * std::pow(x[i] / x[N - 1], 1.0 - p_.rho);
    st.psi = grid_measure(p_.grid, std::move(out));
    st.t += dt;
    record(st);
  }

  double norm_of(const grid_measure& psi) const { return rho_norm_tail_closed(psi, p_.rho).value; }

  // d/dt ∫θΨ at the current state for time-independent test functions (θ, θ').
  struct generator_parts {
    double transport = 0.0, gain = 0.0, loss = 0.0;
    double value() const { return transport + gain - loss; }
    double scale() const { return std::abs(transport) + std::abs(gain) + std::abs(loss); }
  };
  using test_pair = std::pair<std::function<double(double)>, std::function<double(double)>>;
  std::vector<generator_parts> generator(const grid_measure& psi, const std::vector<test_pair>& tests) const {
    const auto C = op_.convolve(psi.density, 0.0);
    const auto L = op_.loss_rate(C, 0.0);
    const auto G = op_.gain(psi.density, C, 0.0);
    const auto w = p_.grid.weights();
    const auto x = p_.grid.nodes();
    std::vector<generator_parts> out(tests.size());
    parallel_for(tests.size(), [&](std::size_t k) {
      const auto& [theta, dtheta] = tests[k];
      std::vector<double> tr(x.size()), ga(x.size()), lo(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double th = theta(x[i]);
        tr[i] = -w[i] * psi.density[i] * (x[i] * dtheta(x[i]) + (2.0 - p_.rho) * th) / p_.rho;
        ga[i] = w[i] * G.density[i] * th;
        lo[i] = w[i] * psi.density[i] * L[i] * th;
      }
      out[k] = {pairwise_sum(tr), pairwise_sum(ga), pairwise_sum(lo)};
    });
    return out;
  }

  // max over the tests of |d/dt ∫θΨ| relative to the size of its parts
  double stationarity_residual(const grid_measure& psi, const std::vector<test_pair>& tests) const {
    double r = 0.0;
    for (const auto& g : generator(psi, tests)) r = std::max(r, g.scale() > 0.0 ? std::abs(g.value()) / g.scale() : 0.0);
    return r;
  }

 private:
  void record(evolution_state& st) const {
    st.rho_norm_history.emplace_back(st.t, norm_of(st.psi));
    st.lower_bound_margin_history.emplace_back(st.t,
                                               lambda_lower_bound_margin(st.psi, p_.rho, p_.R0, 4, true));
    st.mass_history.emplace_back(st.t, total_mass(st.psi));
  }

  evolution_params p_;
  collision_operator op_;
};

inline evolution_state semigroup_step(const evolution_params& p, evolution_state state) {
  evolution ev(p);
  if (state.rho_norm_history.empty()) state = ev.start(state.psi);
  ev.step(state);
  return state;
}

// Ψ-seed (2−ρ)(ρ−1)x^{1−ρ} on the grid.
inline grid_measure psi_seed(double rho, const grid_spec& g) {
  if (!(rho > 1.0 && rho < 2.0)) throw parameter_error("psi_seed: rho must lie in (1,2)");
  return grid_measure::from_function(g, [rho](double x) { return (2.0 - rho) * (rho - 1.0) * std::pow(x, 1.0 - rho); });
}

inline void write_trajectory_csv(std::ostream& os, const evolution_state& st) {
  os << "t,rho_norm,lower_bound_margin,mass\n";
  for (std::size_t k = 0; k < st.rho_norm_history.size(); ++k)
    os << fmt17(st.rho_norm_history[k].first) << ',' << fmt17(st.rho_norm_history[k].second) << ','
       << fmt17(st.lower_bound_margin_history[k].second) << ',' << fmt17(st.mass_history[k].second) << '\n';
}

}  // namespace kwt

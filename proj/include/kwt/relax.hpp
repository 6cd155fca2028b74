#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "profile_solver.hpp"
#include "regularized_evolution.hpp"

namespace kwt {

struct relax_options {
  double stage_tol = 1e-3;  // stationarity residual that ends a stage
  int max_steps = 4000;     // macro-steps per stage
  int check_every = 5;
  std::function<void(std::size_t stage, int step, double residual)> on_check;
};

// Relaxation grid: the evolution cost grows with N², so it stops at 1e-4 on the left.
inline grid_spec default_relax_grid(double rho) {
  check_rho(rho);
  return {1e-4, rho < 2.0 ? 1e6 : 30.0, 512};
}

// Continuation ε → eps_min by the given factors, a = ε/4, two-node macro-steps and
// Picard windows shrinking like ε^{3/2}.
inline std::vector<evolution_params> default_relax_schedule(double rho, const grid_spec& g,
                                                            std::vector<double> eps = {0.5, 0.2, 0.1, 0.05, 0.02}) {
  std::vector<evolution_params> out;
  for (double e : eps) {
    evolution_params p;
    p.rho = rho;
    p.epsilon = e;
    p.a = 0.25 * e;
    p.grid = g;
    p.dt = 2.0 * rho * g.h();
    p.picard_mesh = 2;
    p.picard_tol = 1e-10;
    p.window_cap = std::min(p.step(), 1.34 * std::pow(e, 1.5));
    out.push_back(p);
  }
  return out;
}

// Bumps of the default battery; they vanish near 0, where the grid truncation sits.
inline std::vector<evolution::test_pair> relax_battery(const grid_spec& g) {
  std::vector<evolution::test_pair> out;
  for (const auto& t : default_battery(g))
    if (t.lo > 0.0) out.emplace_back(t.f, t.df);
  return out;
}

// Ψ → Φ = Ψ/x, then dilated to ‖xΦ‖_ρ = 1 (tail-closed): Φ_n(x) = Φ(cx), c = ‖xΦ‖^{1/ρ}.
inline grid_measure phi_from_psi(double rho, const grid_measure& psi) {
  std::vector<double> d(psi.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = psi.density[i] / psi.x(i);
  const double n = rho_norm_tail_closed(psi, rho).value;
  if (!(n > 0.0)) return grid_measure(psi.grid, std::move(d));
  return rescale(grid_measure(psi.grid, std::move(d)), std::pow(n, 1.0 / rho));
}

inline profile_solution relax_to_profile(double rho, const std::vector<evolution_params>& schedule,
                                         const relax_options& opt = {},
                                         const grid_measure* seed = nullptr) {
  if (!(rho > 1.0 && rho < 2.0)) throw parameter_error("relax_to_profile: rho must lie in (1,2)");
  if (schedule.empty()) throw parameter_error("relax_to_profile: empty schedule");
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    schedule[k].validate();
    if (schedule[k].rho != rho) throw parameter_error("relax_to_profile: schedule rho differs from rho");
    if (!(schedule[k].grid == schedule.front().grid)) throw parameter_error("relax_to_profile: schedule grids differ");
    if (k > 0 && !(schedule[k].epsilon < schedule[k - 1].epsilon))
      throw parameter_error("relax_to_profile: epsilon must decrease along the schedule");
  }
  if (opt.check_every < 1 || opt.max_steps < 1) throw parameter_error("relax_to_profile: bad step limits");
  const grid_spec& g = schedule.front().grid;
  grid_measure psi = seed ? *seed : psi_seed(rho, g);
  if (!(psi.grid == g)) throw parameter_error("relax_to_profile: seed grid differs from the schedule grid");
  profile_solution sol;
  sol.rho = rho;
  sol.norm = normalization::rho_norm_one;
  sol.path.method = "relaxation";
  const auto battery = relax_battery(g);
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const auto& p = schedule[k];
    evolution ev(p);
    auto st = ev.start(psi);
    double res = ev.stationarity_residual(st.psi, battery);
    int steps = 0;
    std::string trace = fmt17(res);
    while (!(res < opt.stage_tol)) {
      if (steps >= opt.max_steps)
        throw compute_error("relax_to_profile: stage " + std::to_string(k) + " (epsilon=" + fmt17(p.epsilon) +
                            ") not stationary after " + std::to_string(steps) + " steps; residual trace " + trace);
      for (int j = 0; j < opt.check_every; ++j) ev.step(st);
      steps += opt.check_every;
      res = ev.stationarity_residual(st.psi, battery);
      trace += " " + fmt17(res);
      if (opt.on_check) opt.on_check(k, steps, res);
    }
    psi = st.psi;
    sol.path.eps_schedule.push_back(p.epsilon);
    sol.path.a_schedule.push_back(p.a);
    sol.path.stage_residual.push_back(res);
    sol.path.stage_steps.push_back(steps);
  }
  sol.path.converged = true;
  sol.phi = phi_from_psi(rho, psi);
  return sol;
}

// max over nodes of the first measure inside [lo, hi] of |a − b|/b, b interpolated
inline double weighted_sup_difference(const grid_measure& a, const grid_measure& b, double lo, double hi) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.x(i);
    if (x < lo || x > hi) continue;
    const double bv = b.at(x);
    if (!(bv > 0.0)) throw compute_error("weighted_sup_difference: reference vanishes inside the window");
    m = std::max(m, std::abs(a.density[i] - bv) / bv);
  }
  return m;
}

}  // namespace kwt

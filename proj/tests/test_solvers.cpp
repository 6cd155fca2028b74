#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "kwt/profile_solver.hpp"
#include "kwt/regularized_evolution.hpp"
#include "kwt/relax.hpp"
#include "kwt/selfsimilar_solution.hpp"

using namespace kwt;

TEST(EvolutionParams, Validation) {
  evolution_params p;
  EXPECT_NO_THROW(p.validate());
  auto bad = p;
  bad.rho = 2.0;
  EXPECT_THROW(bad.validate(), parameter_error);
  bad = p;
  bad.a = 0.3;  // a must stay below epsilon/2
  EXPECT_THROW(bad.validate(), parameter_error);
  bad = p;
  bad.grid.n = 64;  // mollifier under-resolved at x = epsilon
  EXPECT_THROW(bad.validate(), parameter_error);
  EXPECT_THROW(psi_seed(2.0, p.grid), parameter_error);
}

TEST(Evolution, NormNonIncreasingAndMarginHeld) {
  evolution_params p;
  p.grid = {1e-2, 1e2, 160};
  p.epsilon = 0.5;
  p.a = 0.2;
  evolution ev(p);
  auto st = ev.start(psi_seed(p.rho, p.grid));
  for (int k = 0; k < 6; ++k) ev.step(st);
  const auto& h = st.rho_norm_history;
  ASSERT_EQ(h.size(), 7u);
  for (std::size_t k = 1; k < h.size(); ++k) EXPECT_LE(h[k].second, h[k - 1].second * (1.0 + 1e-8)) << k;
  for (const auto& [t, m] : st.lower_bound_margin_history) EXPECT_GE(m, -1e-6);
  EXPECT_GT(st.picard_iterations, 0);
  EXPECT_LT(st.max_contraction_factor, 1.0);
  std::ostringstream os;
  write_trajectory_csv(os, st);
  EXPECT_EQ(os.str().substr(0, 37), "t,rho_norm,lower_bound_margin,mass\n0,");
}

TEST(Evolution, ThreadCountDoesNotChangeResult) {
  evolution_params p;
  p.grid = {1e-2, 1e2, 160};
  p.a = 0.2;
  evolution ev(p);
  set_threads(1);
  auto a = ev.start(psi_seed(p.rho, p.grid));
  ev.step(a);
  set_threads(6);
  auto b = ev.start(psi_seed(p.rho, p.grid));
  ev.step(b);
  set_threads(1);
  EXPECT_EQ(a.psi.density, b.psi.density);
}

TEST(Profile, RhoRange) {
  EXPECT_THROW(default_profile_grid(0.9), parameter_error);
  EXPECT_THROW(default_profile_grid(2.1), parameter_error);
  EXPECT_DOUBLE_EQ(tail_constant(1.5), 0.25);
}

// Coarse solve against values frozen from the default-grid solution (N = 614 on [1e-6, 1e6]).
TEST(Profile, CoarseSolveMatchesFrozenProfile) {
  const double rho = 1.5;
  const auto sol = solve_profile(rho, {1e-5, 1e5, 300});
  EXPECT_TRUE(sol.path.converged);
  EXPECT_LT(sol.residual_strong, 1e-3);
  EXPECT_LT(sol.residual_weak, 1e-3);
  for (const auto& [x, v] : std::vector<std::pair<double, double>>{
           {1e-3, 27.1088091}, {0.1, 2.36735383}, {1.0, 0.34727541}, {10.0, 0.0080549928}, {1e3, 7.90551931e-06}})
    EXPECT_NEAR(sol.phi.at(x), v, 5e-3 * v) << "x=" << x;
}

// G(t) keeps total mass M exactly; the constant test function has zero residual.
TEST(Family, MassAndConstantTest) {
  const double rho = 1.5;
  const grid_spec g{1e-4, 1e2, 300};
  const auto phi = grid_measure::from_function(g, [](double x) { return std::exp(-x) / std::sqrt(x); });
  const auto f = make_family(rho, phi, 1.0, 3.0);
  EXPECT_NEAR(family_atom(f, 0.0), 3.0 - f.mass, 1e-15);
  for (double t : {0.0, 0.5, 2.0}) EXPECT_NEAR(total_mass(evaluate_G(f, t)), 3.0, 1e-14);
  const auto rows = weak_form_residuals(f, {constant_test(1.0)}, {0.5, 1.0});
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) EXPECT_LT(r.residual, 1e-12);
  EXPECT_THROW(make_family(rho, phi, 1.0, 0.5 * f.mass), parameter_error);
  EXPECT_THROW(make_family(rho, phi, 0.0), parameter_error);
  EXPECT_THROW(weak_form_residuals(f, {constant_test(1.0)}, {1.0}, 32), parameter_error);
}

TEST(Family, EnergyConservedForRhoTwo) {
  const grid_spec g{1e-4, 30.0, 300};
  const auto phi = grid_measure::from_function(g, [](double x) { return std::exp(-4.0 * x); });
  const auto f = make_family(2.0, phi, 1.0);
  const double e0 = moment(evaluate_G(f, 0.0), 1.0);
  for (double t : {0.5, 1.0}) EXPECT_NEAR(moment(evaluate_G(f, t), 1.0), e0, 1e-14 * e0);
}

TEST(Relax, ScheduleAndComparison) {
  const auto s = default_relax_schedule(1.5, default_relax_grid(1.5));
  ASSERT_EQ(s.size(), 5u);
  for (std::size_t k = 1; k < s.size(); ++k) EXPECT_LT(s[k].epsilon, s[k - 1].epsilon);
  const grid_spec g{1e-2, 1e2, 64};
  const auto a = grid_measure::from_function(g, [](double x) { return 1.0 / x; });
  const auto b = grid_measure::from_function(g, [](double x) { return 1.1 / x; });
  EXPECT_NEAR(weighted_sup_difference(a, b, 0.1, 10.0), 0.1 / 1.1, 1e-3);
}

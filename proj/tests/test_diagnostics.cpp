#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "kwt/diagnostics.hpp"

using namespace kwt;

namespace {
const double pi = 3.14159265358979323846;
}

// Φ = 1 on (0,1): with x = u², y = v² the flux integral at r = 1 reduces to
// 4∬_{u²+v²>1} (u²+v²−1) over the unit square, i.e. π/2 − 4/3.
TEST(CalI, IndicatorOfUnitIntervalClosedForm) {
  density_view P;
  P.phi = [](double x) { return x < 1.0 ? 1.0 : 0.0; };
  P.x_lo = 1e-18;
  P.x_hi = 1.0;
  P.kinks = {1.0};
  EXPECT_NEAR(cal_I(P, 1.0), pi / 2.0 - 4.0 / 3.0, 1e-7);
  EXPECT_THROW(cal_I(P, 0.0), parameter_error);
}

// Same indicator, r = 1/2: a dense product-midpoint oracle over the unit square.
TEST(CalI, IndicatorAgainstDenseOracle) {
  density_view P;
  P.phi = [](double x) { return x < 1.0 ? 1.0 : 0.0; };
  P.x_lo = 1e-18;
  P.x_hi = 1.0;
  P.kinks = {1.0};
  const double r = 0.5;
  // substitution x = u², y = v² removes the 1/√ singularities: 4∬ k(u²,v²) du dv
  const int n = 1500;
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = std::pow((i + 0.5) / n, 2), y = std::pow((j + 0.5) / n, 2);
      s += std::min(std::max(0.0, x + y - r), std::max(0.0, r - std::abs(x - y)));
    }
  s *= 4.0 / (double(n) * n);
  EXPECT_NEAR(cal_I(P, r), s, 1e-5 * s);
}

TEST(Fits, LinearFitRecoversLine) {
  std::vector<double> u, v;
  for (int k = 0; k < 10; ++k) u.push_back(k), v.push_back(2.0 - 0.75 * k);
  const auto f = linear_fit(u, v);
  EXPECT_NEAR(f.rate, 0.75, 1e-14);
  EXPECT_NEAR(f.intercept, 2.0, 1e-14);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-14);
  EXPECT_THROW(linear_fit({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), compute_error);
}

TEST(Fits, PowerTailExponent) {
  const grid_spec g{1e-4, 1e5, 600};
  const auto phi = grid_measure::from_function(g, [](double x) { return 3.0 * std::pow(x, -1.37); });
  const auto f = tail_fit(phi, default_tail_window(g), tail_model::power);
  EXPECT_NEAR(f.rate, 1.37, 1e-10);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
  EXPECT_GE(f.n, 20u);
  EXPECT_THROW(tail_fit(phi, {1e3, 1e6}, tail_model::power), parameter_error);
}

TEST(Fits, ExponentialTailRate) {
  const grid_spec g{1e-4, 30.0, 512};
  const auto phi = grid_measure::from_function(g, [](double x) { return 0.4 * std::exp(-4.5 * x); });
  EXPECT_NEAR(tail_fit(phi, {1.0, 10.0}, tail_model::exponential).rate, 4.5, 1e-10);
}

TEST(Fits, TailConstantRatioOfExactTail) {
  const double rho = 1.5, c = (2.0 - rho) * (rho - 1.0);
  const grid_spec g{1e-4, 1e4, 200};
  const auto phi = grid_measure::from_function(g, [&](double x) { return c * std::pow(x, -rho); });
  EXPECT_NEAR(tail_constant_ratio(rho, phi, 333.0), 1.0, 1e-12);
  EXPECT_THROW(tail_constant_ratio(2.0, phi, 1.0), parameter_error);
}

TEST(Points, LogAndInterval) {
  const auto r = log_points(1e-2, 1e2, 5);
  ASSERT_EQ(r.size(), 5u);
  EXPECT_NEAR(r[2], 1.0, 1e-15);
  EXPECT_EQ(r.front(), 1e-2);
  EXPECT_EQ(interval_points(1.0, 10.0), (std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_THROW(log_points(0.0, 1.0, 3), parameter_error);
}

// e^{−3x}: I_R = e^{−3R}(1 − e^{−3})/3 exactly log-linear in R.
TEST(ExponentialLower, IntervalIntegralsOfExponential) {
  const grid_spec g{1e-4, 30.0, 3000};
  const auto phi = grid_measure::from_function(g, [](double x) { return std::exp(-3.0 * x); });
  const auto res = exp_lower_check(phi, interval_points(1.0, 10.0));
  ASSERT_EQ(res.rows.size(), 9u);
  for (const auto& row : res.rows)
    EXPECT_NEAR(row.I, std::exp(-3.0 * row.R) * (1.0 - std::exp(-3.0)) / 3.0, 2e-3 * row.I);  // trapezoid in ln x: cell width h·x
  EXPECT_NEAR(res.fit.rate, 3.0, 3e-4);
  EXPECT_GT(res.min_I, 0.0);
}

// e^{−x}: m_γ = Γ(γ+1) and A = 3m₀ = 3.
TEST(Moments, ExponentialSatisfiesBounds) {
  const grid_spec g{1e-5, 60.0, 2000};
  const auto phi = grid_measure::from_function(g, [](double x) { return std::exp(-x); });
  const auto rows = moment_bound_check(phi, {0.5, 1.0, 2.0, 4.0, 8.0});
  for (const auto& r : rows) {
    EXPECT_NEAR(r.m, std::tgamma(r.gamma + 1.0), 1e-4 * r.m) << r.gamma;
    EXPECT_NEAR(r.bound, std::pow(r.gamma, r.gamma) * std::pow(3.0, r.gamma + 1.0), 3e-5 * (r.gamma + 1.0) * r.bound);
    EXPECT_TRUE(r.ok);
  }
  const auto rel = moment_relation_check(profile_probe(2.0, phi));
  EXPECT_NEAR(rel.m2, 2.0, 1e-4);
  EXPECT_TRUE(rel.quadratic_ok);  // 2 ≤ 2·1·1
  EXPECT_TRUE(rel.holder_ok);
}

// x^{−1/2} on the grid: ∫_{x_min}^R / √R → 2 at the right end.
TEST(SqrtBound, InverseSquareRootDensity) {
  const grid_spec g{1e-8, 1e2, 800};
  const auto phi = grid_measure::from_function(g, [](double x) { return 1.0 / std::sqrt(x); });
  EXPECT_NEAR(sqrtR_bound_constant(profile_probe(1.5, phi), false), 2.0 * (1.0 - 1e-5), 1e-4);
}

TEST(ProfileProbe, RejectsAtom) {
  const grid_spec g{1e-2, 1e2, 32};
  const auto phi = grid_measure::from_function(g, [](double) { return 1.0; }, 0.5);
  EXPECT_THROW(profile_probe(1.5, phi), domain_error);
  EXPECT_THROW(profile_probe(0.9, grid_measure::zero(g)), parameter_error);
  EXPECT_EQ(cal_I(profile_probe(1.5, grid_measure::zero(g)), 1.0), 0.0);
}

TEST(ReportCsv, Headers) {
  std::ostringstream a, b, c;
  write_flux_csv(a, {flux_point{1.0, 2.0, 1.0, 0.0}});
  write_interval_csv(b, {interval_row{1.0, 0.5}});
  write_moment_csv(c, {moment_row{0.5, 1.0, 2.0, true}});
  EXPECT_EQ(a.str().substr(0, 8), "r,calI\n1");
  EXPECT_EQ(b.str().substr(0, 6), "R,I_R\n");
  EXPECT_EQ(c.str().substr(0, 21), "gamma,m_gamma,bound\n0");
}

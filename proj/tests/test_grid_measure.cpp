#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "kwt/grid_measure.hpp"

using namespace kwt;

TEST(GridSpec, RejectsBadBounds) {
  EXPECT_THROW((grid_spec{1.0, 1.0, 64}.validate()), parameter_error);
  EXPECT_THROW((grid_spec{-1.0, 1.0, 64}.validate()), parameter_error);
  EXPECT_THROW((grid_spec{1e-3, 1.0, 8}.validate()), parameter_error);
}

TEST(GridSpec, EndpointsExactAndLogUniform) {
  const grid_spec g{1e-3, 1e3, 61};
  EXPECT_EQ(g.node(0), 1e-3);
  EXPECT_EQ(g.node(60), 1e3);
  EXPECT_NEAR(std::log(g.node(31) / g.node(30)), g.h(), 1e-13);
}

TEST(GridMeasure, RejectsNegativeDensity) {
  const grid_spec g{1e-2, 1e2, 32};
  std::vector<double> d(32, 1.0);
  d[5] = -1e-3;
  EXPECT_THROW(grid_measure(g, d), domain_error);
}

TEST(GridMeasure, MassOfExponentialAndAtom) {
  const grid_spec g{1e-7, 60.0, 4000};
  const auto mu = grid_measure::from_function(g, [](double x) { return std::exp(-x); }, 0.25);
  EXPECT_NEAR(total_mass(mu), 1.25, 2e-5);
  EXPECT_NEAR(moment(mu, 1.0), 1.0, 2e-5);
  EXPECT_NEAR(moment(mu, 0.0, 1e9, true), 1.25, 2e-5);
}

TEST(GridMeasure, PartialIntegralOfPowerLaw) {
  const grid_spec g{1e-3, 1e3, 500};
  const auto mu = grid_measure::from_function(g, [](double x) { return 1.0 / x; });
  // ∫_{0.1}^{10} dx/x = ln 100, cut points between nodes
  EXPECT_NEAR(partial_integral(mu, [](double) { return 1.0; }, 0.1, 10.0), std::log(100.0), 1e-3);
}

TEST(GridMeasure, InterpolationExactForPowerLaw) {
  const grid_spec g{1e-2, 1e2, 64};
  const auto mu = grid_measure::from_function(g, [](double x) { return std::pow(x, -0.7); });
  for (double z : {0.0137, 0.5, 3.3, 77.0}) EXPECT_NEAR(mu.at(z), std::pow(z, -0.7), 1e-12 * std::pow(z, -0.7));
  EXPECT_EQ(mu.at(1e-3), 0.0);
  EXPECT_EQ(mu.at(1e3), 0.0);
}

// c x^{1−ρ} with c = (2−ρ)(ρ−1) has ρ-norm 1 on (0,∞); the grid misses only (0, x_min).
TEST(RhoNorm, TailClosedPowerLawIsOne) {
  for (double rho : {1.3, 1.5, 1.7}) {
    const grid_spec g{1e-8, 1e4, 800};
    const double c = (2.0 - rho) * (rho - 1.0);
    const auto mu = grid_measure::from_function(g, [&](double x) { return c * std::pow(x, 1.0 - rho); });
    const auto r = rho_norm_tail_closed(mu, rho);
    EXPECT_NEAR(r.value, 1.0, 2e-3) << "rho=" << rho;
    EXPECT_LE(rho_norm(mu, rho).value, r.value);
  }
}

TEST(RhoNorm, AtomRejectedBelowTwo) {
  const grid_spec g{1e-2, 1e2, 32};
  const auto mu = grid_measure::from_function(g, [](double) { return 1.0; }, 0.5);
  EXPECT_THROW(rho_norm(mu, 1.5), domain_error);
  EXPECT_NO_THROW(rho_norm(mu, 2.0));
}

// μ(cx) has ρ-norm c^{1−ρ}‖μ‖; for the measure xμ(cx) the factor is c^{−ρ}.
TEST(Rescale, ScalesNormByPower) {
  const double rho = 1.5;
  const grid_spec g{1e-4, 1e4, 400};
  const auto mu = grid_measure::from_function(g, [](double x) { return std::exp(-x) / std::sqrt(x); });
  const double n0 = rho_norm(mu, rho).value;
  for (double c : {0.5, 2.0}) {
    const auto s = rescale(mu, c);
    EXPECT_NEAR(s.at(g.x_min * 3.0 / c), mu.at(g.x_min * 3.0), 1e-13 * mu.at(g.x_min * 3.0));
    EXPECT_NEAR(rho_norm(s, rho).value, std::pow(c, 1.0 - rho) * n0, 1e-9 * n0);
  }
  EXPECT_THROW(rescale(mu, 0.0), parameter_error);
}

TEST(MeasureCsv, RoundTripIsByteExact) {
  const grid_spec g{1e-3, 1e3, 50};
  const auto mu = grid_measure::from_function(g, [](double x) { return 1.0 / (1.0 + x * x); }, 0.125);
  std::ostringstream a;
  write_measure_csv(a, mu);
  std::istringstream in(a.str());
  const auto back = read_measure_csv(in);
  EXPECT_EQ(back.atom, 0.125);
  EXPECT_EQ(back.density, mu.density);
  std::ostringstream b;
  write_measure_csv(b, back);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("# atom_at_zero=0.125"), std::string::npos);
}

TEST(MeasureCsv, RejectsMalformedInput) {
  std::istringstream bad_header("x,y\n1,2\n");
  EXPECT_THROW(read_measure_csv(bad_header), io_error);
  std::istringstream bad_num("x,density\n0.1,abc\n1,2\n");
  EXPECT_THROW(read_measure_csv(bad_num), io_error);
  std::istringstream not_log("x,density\n1,1\n2,1\n4,1\n5,1\n6,1\n7,1\n8,1\n9,1\n10,1\n11,1\n12,1\n13,1\n14,1\n15,1\n16,1\n17,1\n");
  EXPECT_THROW(read_measure_csv(not_log), io_error);
  EXPECT_THROW(read_measure_csv(std::string("/nonexistent/dir/m.csv")), io_error);
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "kwt/stable_law.hpp"

using namespace kwt;

namespace {
const double pi = 3.14159265358979323846;

const stable_table& table(double alpha) {
  static std::map<double, stable_table> cache;
  auto it = cache.find(alpha);
  if (it == cache.end()) it = cache.emplace(alpha, build_stable_table(alpha, 4096, 100.0)).first;
  return it->second;
}
}  // namespace

TEST(StableLaw, RejectsAlphaOutsideOpenInterval) {
  for (double a : {0.0, 2.0, -0.5, 2.5, std::nan("")}) EXPECT_THROW(check_alpha(a), parameter_error) << a;
  EXPECT_THROW(build_stable_table(1.0, 64, 100.0), parameter_error);
}

TEST(StableLaw, CauchyClosedForm) {
  EXPECT_DOUBLE_EQ(c_alpha(1.0), pi);
  const auto& t = table(1.0);
  double worst = 0.0;
  for (int j = 0; j <= 2000; ++j) {
    const double z = 10.0 * j / 2000.0;
    worst = std::max(worst, std::abs(t.eval(z) - 1.0 / (pi * pi + z * z)));
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(StableLaw, InvariantsForThreeAlphas) {
  for (double a : {0.5, 1.0, 1.5}) {
    const auto inv = check_stable_table(table(a));
    EXPECT_NEAR(inv.normalization, 1.0, 1e-5) << a;
    EXPECT_TRUE(inv.positive) << a;
    EXPECT_TRUE(inv.strictly_decreasing) << a;
  }
}

// z^{1+α}v(z) → 1 with a first correction of order z^{−α}; frozen values of the
// asymptotic series at z = 50.
TEST(StableLaw, TailProductMatchesSeriesAtFifty) {
  EXPECT_NEAR(check_stable_table(table(1.5)).tail_product_50, 1.03075632, 1e-6);
  EXPECT_NEAR(check_stable_table(table(1.0)).tail_product_50, 2500.0 / (pi * pi + 2500.0), 1e-9);
  // α = 0.5: the series is 1 − 4.01/√50 + …, far from 1 at z = 50
  EXPECT_NEAR(check_stable_table(table(0.5)).tail_product_50, 0.55414225, 1e-6);
}

TEST(StableLaw, SelfSimilarScaling) {
  const auto& t = table(1.5);
  for (double x : {0.3, 2.0, 9.0})
    EXPECT_NEAR(u_alpha_eval(t, 8.0, x), std::pow(8.0, -1.0 / 1.5) * t.eval(x * std::pow(8.0, -1.0 / 1.5)), 1e-15);
  EXPECT_THROW(u_alpha_eval(t, 0.0, 1.0), parameter_error);
}

// Odd step data under the Cauchy semigroup: u(t,x) = (2/π) arctan(x/(πt)).
TEST(StableLaw, OddEvolutionOfStep) {
  const auto& t = table(1.0);
  const std::vector<double> xs{-3.0, -0.4, 0.0, 0.7, 2.0, 15.0};
  const auto u = evolve_odd([](double y) { return y > 0.0 ? 1.0 : 0.0; }, t, 0.5, xs);
  for (std::size_t i = 0; i < xs.size(); ++i)
    EXPECT_NEAR(u[i], 2.0 / pi * std::atan(xs[i] / (pi * 0.5)), 1e-7) << xs[i];
}

TEST(StableLaw, CsvRoundTrip) {
  const auto& t = table(1.5);
  const auto dir = std::filesystem::temp_directory_path() / "kwt_stable_rt";
  std::filesystem::create_directories(dir);
  const std::string p = (dir / "t.csv").string();
  write_stable_csv(p, t);
  const auto back = read_stable_csv(p);
  EXPECT_EQ(back.alpha, t.alpha);
  EXPECT_EQ(back.c, t.c);
  EXPECT_EQ(back.z, t.z);
  EXPECT_EQ(back.v, t.v);
  for (double z : {0.5, 3.0, 40.0}) EXPECT_NEAR(back.eval(z), t.eval(z), 1e-6 * t.eval(z));
  EXPECT_THROW(read_stable_csv((dir / "missing.csv").string()), io_error);
  std::filesystem::remove_all(dir);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "kwt/core.hpp"
#include "kwt/secdiff.hpp"

using namespace kwt;

TEST(PairwiseSum, MatchesExactSumOfIntegers) {
  std::vector<double> v(1001);
  std::iota(v.begin(), v.end(), 1.0);
  EXPECT_EQ(pairwise_sum(v), 1001.0 * 1002.0 / 2.0);
}

TEST(ParallelFor, ResultIndependentOfThreadCount) {
  std::vector<double> a(997), b(997);
  auto body = [](std::vector<double>& out) {
    return [&out](std::size_t i) { out[i] = std::sin(0.37 * static_cast<double>(i)) * std::exp(-1e-3 * i); };
  };
  set_threads(1);
  parallel_for(a.size(), body(a));
  set_threads(8);
  parallel_for(b.size(), body(b));
  set_threads(1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(pairwise_sum(a), pairwise_sum(b));
}

TEST(ParallelFor, PropagatesExceptions) {
  set_threads(4);
  EXPECT_THROW(parallel_for(100, [](std::size_t i) {
                 if (i == 57) throw compute_error("boom");
               }),
               compute_error);
  set_threads(1);
}

TEST(SecondDifference, QuadraticGivesTwoASquared) {
  auto f = [](double x) { return 3.0 * x * x + 2.0 * x - 1.0; };
  EXPECT_NEAR(delta2(f, 1.7, 0.4), 6.0 * 0.16, 1e-13);
}

TEST(SecondDifference, ThetaClosedFormMatchesGeneric) {
  for (double R : {0.5, 1.0, 3.0})
    for (double x : {0.1, 0.9, 2.0, 5.0})
      for (double y : {0.05, 0.7, 1.5, 4.0}) {
        const double generic = D2star([R](double z) { return theta_R(R, z); }, x, y);
        EXPECT_NEAR(generic, D2star_theta_R_closed(R, x, y), 1e-12) << R << ' ' << x << ' ' << y;
        EXPECT_LE(D2star_theta_R_closed(R, x, y), 0.0);
      }
}

TEST(SecondDifference, KernelIdentities) {
  auto f = [](double x) { return std::exp(0.3 * x) * std::cos(x); };
  auto f2 = [](double x) {
    return std::exp(0.3 * x) * ((0.09 - 1.0) * std::cos(x) - 0.6 * std::sin(x));
  };
  for (double y : {0.2, 1.0, 2.5}) {
    EXPECT_LT(delta2_kernel_identity_check(f, f2, 0.8, y), 1e-12);
    EXPECT_LT(delta2_derivative_identity_check(f, f2, 0.8, y), 1e-7);
  }
}

TEST(GaussRule, IntegratesPolynomialsExactly) {
  double I = 0.0;
  gauss_panels<8>(0.0, 2.0, 10.0, [&](double x, double w) { I += w * std::pow(x, 15); });
  EXPECT_NEAR(I, std::pow(2.0, 16) / 16.0, 1e-9);
  double J = 0.0;
  log_panels<8>(1.0, std::exp(1.0), 0.25, [&](double y, double w) { J += w / y; });
  EXPECT_NEAR(J, 1.0, 1e-14);
}

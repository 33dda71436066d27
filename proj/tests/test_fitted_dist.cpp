#include <psrkit/fitted_dist.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace psrkit;

namespace {

FittedDistribution three_point() { return FittedDistribution::discrete({1, 2, 3}, {0.2, 0.7, 1.0}); }

TEST(Cdf, Examples) {
  EXPECT_DOUBLE_EQ(three_point().cdf(2.0), 0.7);
  EXPECT_DOUBLE_EQ(FittedDistribution::normal(0, 1).cdf(0.0), 0.5);
  EXPECT_NEAR(FittedDistribution::exponential(1.0).cdf(std::log(2.0)), 0.5, 1e-15);
}

TEST(CdfLeft, Examples) {
  auto f = three_point();
  EXPECT_DOUBLE_EQ(f.cdf_left(2.0), 0.2);
  EXPECT_DOUBLE_EQ(f.cdf_left(1.5), 0.2);
  EXPECT_DOUBLE_EQ(f.cdf(1.5), 0.2);
  EXPECT_DOUBLE_EQ(FittedDistribution::normal(0, 1).cdf_left(0.0), 0.5);
  EXPECT_EQ(f.cdf_left(1.0), 0.0);
  EXPECT_EQ(f.cdf(3.0), 1.0);
  EXPECT_EQ(f.cdf(0.5), 0.0);
}

TEST(NormalCdf, Accuracy) {
  // Reference values of Phi.
  EXPECT_NEAR(stats::normal_cdf(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(stats::normal_cdf(-2.5), 0.006209665325776132, 1e-16);
  EXPECT_NEAR(stats::normal_quantile(0.975), 1.959963984540054, 1e-12);
  for (double p : {1e-10, 0.01, 0.3, 0.5, 0.77, 0.999999})
    EXPECT_NEAR(stats::normal_cdf(stats::normal_quantile(p)), p, 1e-14 + 1e-12 * p);
}

TEST(Discrete, Validation) {
  EXPECT_THROW(FittedDistribution::discrete({1, 1}, {0.5, 1.0}), UserError);
  EXPECT_THROW(FittedDistribution::discrete({1, 2}, {0.6, 0.5}), UserError);
  EXPECT_THROW(FittedDistribution::discrete({1, 2}, {0.5}), UserError);
  EXPECT_THROW(FittedDistribution::normal(0, 0), UserError);
  EXPECT_THROW(FittedDistribution::exponential(-1), UserError);
}

TEST(ShiftedEmpirical, Atoms) {
  auto f = FittedDistribution::shifted_empirical(10.0, {-1.0, 0.0, 0.0, 2.0});
  EXPECT_DOUBLE_EQ(f.cdf(10.0), 0.75);
  EXPECT_DOUBLE_EQ(f.cdf_left(10.0), 0.25);
  EXPECT_DOUBLE_EQ(f.cdf(11.9), 0.75);
  EXPECT_DOUBLE_EQ(f.cdf(12.0), 1.0);
}

std::vector<FittedDistribution> zoo() {
  return {three_point(),
          FittedDistribution::from_probs({0, 1, 2, 3, 4}, std::vector<double>{0.10, 0.25, 0.27, 0.27, 0.11}),
          FittedDistribution::normal(1.5, 0.7), FittedDistribution::exponential(2.0),
          FittedDistribution::shifted_empirical(-1.0, {-0.3, 0.1, 0.1, 0.8, 1.2})};
}

TEST(Properties, OrderingMonotonicityAtoms) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(-3, 6);
  for (const auto& f : zoo()) {
    std::vector<double> ys;
    for (int i = 0; i < 300; ++i) ys.push_back(u(g));
    for (double s : {0.0, 1.0, 2.0, 3.0, 4.0, -1.3, -0.9, 0.2}) ys.push_back(s);
    std::sort(ys.begin(), ys.end());
    double prev_c = 0, prev_l = 0;
    for (double y : ys) {
      double c = f.cdf(y), l = f.cdf_left(y);
      EXPECT_LE(0.0, l);
      EXPECT_LE(l, c);
      EXPECT_LE(c, 1.0);
      EXPECT_GE(c, prev_c);
      EXPECT_GE(l, prev_l);
      prev_c = c;
      prev_l = l;
      if (std::holds_alternative<NormalDist>(f.form()) ||
          std::holds_alternative<ExponentialDist>(f.form())) {
        EXPECT_EQ(c, l);
      }
    }
  }
}

TEST(Properties, AtomMass) {
  auto f = FittedDistribution::from_probs({0, 1, 2, 3, 4}, std::vector<double>{0.10, 0.25, 0.27, 0.27, 0.11});
  const double probs[] = {0.10, 0.25, 0.27, 0.27, 0.11};
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(f.cdf(k) - f.cdf_left(k), probs[k], 1e-15);
  EXPECT_EQ(f.cdf(2.5) - f.cdf_left(2.5), 0.0);
}

TEST(Json, DumpsForm) {
  auto j = three_point().to_json();
  EXPECT_EQ(j["form"], "discrete");
  EXPECT_EQ(j["points"].size(), 3u);
  EXPECT_EQ(FittedDistribution::normal(5, 2).to_json()["sigma"], 2.0);
}

}  // namespace

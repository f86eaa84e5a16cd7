// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ssd/schedule.hpp"
#include "ssd/stats.hpp"
#include "support.hpp"

using namespace ssd;

TEST(Schedule, LinearEndpointsExact) {
  const NoiseSchedule s = linear_beta_schedule(1000, 1e-4, 0.02);
  ASSERT_EQ(s.total_steps(), 1000);
  EXPECT_EQ(s.beta(1), 1e-4);
  EXPECT_EQ(s.beta(1000), 0.02);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(Schedule, TwoStepHandValues) {
  const NoiseSchedule s = linear_beta_schedule(2, 0.1, 0.3);
  EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.63, 1e-15);
}

TEST(Schedule, AlphaBarRecurrenceAndMonotone) {
  const NoiseSchedule s = linear_beta_schedule();
  for (int t = 1; t <= s.total_steps(); ++t) {
    const double ratio = s.alpha_bar(t) / s.alpha_bar(t - 1);
    EXPECT_NEAR(ratio, 1.0 - s.beta(t), 1e-12 * (1.0 - s.beta(t)));
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
}

TEST(Schedule, RejectsBadParameters) {
  EXPECT_THROW(linear_beta_schedule(1, 1e-4, 0.02), ConfigError);
  EXPECT_THROW(linear_beta_schedule(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(linear_beta_schedule(10, 1e-4, 1.0), ConfigError);
  EXPECT_THROW(linear_beta_schedule(10, 0.2, 0.1), ConfigError);
  EXPECT_THROW(NoiseSchedule({0.5, 1.5}), ConfigError);
}

TEST(Schedule, IndexRange) {
  const NoiseSchedule s = linear_beta_schedule(10, 0.01, 0.02);
  EXPECT_THROW(s.beta(0), ConfigError);
  EXPECT_THROW(s.alpha_bar(11), ConfigError);
  EXPECT_THROW(s.alpha_bar(-1), ConfigError);
}

TEST(Schedule, EffectiveBetaTelescopes) {
  const NoiseSchedule s = linear_beta_schedule();
  EXPECT_NEAR(s.effective_beta(41, 42), s.beta(42), 1e-15);
  EXPECT_NEAR(1.0 - s.effective_beta(0, 550), s.alpha_bar(550), 1e-15);
}

TEST(Grid, Examples) {
  const NoiseSchedule s = linear_beta_schedule();
  EXPECT_EQ(make_grid(s, 2, 550).taus, (std::vector<int>{0, 550}));
  EXPECT_EQ(make_grid(s, 5, 550).taus, (std::vector<int>{0, 138, 275, 413, 550}));
  const auto dense = make_grid(s, 551, 550).taus;
  ASSERT_EQ(dense.size(), 551u);
  for (int i = 0; i <= 550; ++i) EXPECT_EQ(dense[static_cast<std::size_t>(i)], i);
}

TEST(Grid, StrictAndExactEndpointsForAllSizes) {
  const NoiseSchedule s = linear_beta_schedule(100, 1e-4, 0.02);
  for (int t0 = 1; t0 < 100; ++t0) {
    for (int steps = 2; steps <= t0 + 1; ++steps) {
      const auto g = make_grid(s, steps, t0);
      ASSERT_EQ(g.taus.front(), 0);
      ASSERT_EQ(g.t0(), t0);
      ASSERT_EQ(static_cast<int>(g.size()), steps);
      for (std::size_t i = 1; i < g.size(); ++i) ASSERT_LT(g.taus[i - 1], g.taus[i]);
    }
  }
}

TEST(Grid, RejectsInvalid) {
  const NoiseSchedule s = linear_beta_schedule();
  EXPECT_THROW(make_grid(s, 552, 550), ConfigError);
  EXPECT_THROW(make_grid(s, 1, 550), ConfigError);
  EXPECT_THROW(make_grid(s, 5, 0), ConfigError);
  EXPECT_THROW(make_grid(s, 5, 1000), ConfigError);
}

TEST(QSample, ScalarAndLimits) {
  const NoiseSchedule s({0.75});
  const Tensor x = q_sample(s, Tensor::scalar(1.0), 1, Tensor::scalar(-1.0));
  EXPECT_NEAR(x[0], -0.366025, 1e-6);

  const NoiseSchedule lin = linear_beta_schedule();
  const Tensor x0 = testkit::random_tensor({4, 4, 1}, 1);
  const Tensor eps = testkit::random_tensor({4, 4, 1}, 2);
  EXPECT_EQ(q_sample(lin, x0, 0, eps), x0);
  const NoiseSchedule harsh = linear_beta_schedule(1000, 0.5, 0.9);
  EXPECT_LT(max_abs_diff(q_sample(harsh, x0, 1000, eps), eps), 1e-12);
  EXPECT_THROW(q_sample(lin, x0, 0, Tensor({3})), ShapeError);
  EXPECT_THROW(q_sample(lin, x0, 1001, eps), ConfigError);
}

TEST(QSample, MonteCarloMoments) {
  const NoiseSchedule s = linear_beta_schedule();
  const int t = 300;
  const double x0 = 0.7;
  const std::size_t n = 100000;
  Rng rng(11);
  const Tensor eps = rng.normal_like({n});
  const Tensor xt = q_sample(s, Tensor({n}, x0), t, eps);
  const Moments m = sample_moments(xt.values());
  const double ab = s.alpha_bar(t);
  const double var = 1.0 - ab;
  EXPECT_LT(std::abs(m.mean - std::sqrt(ab) * x0), 4.0 * std::sqrt(var / n));
  EXPECT_LT(std::abs(m.variance - var), 4.0 * var * std::sqrt(2.0 / (n - 1)));
}

// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "support.hpp"

using namespace ssd;

namespace {

/// Samples with exactly the given sample mean and unbiased variance.
std::vector<double> with_moments(double mean, double variance, std::size_t n = 1000) {
  Rng rng(1);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  const Moments m = sample_moments(v);
  for (auto& x : v) x = mean + (x - m.mean) * std::sqrt(variance / m.variance);
  return v;
}

GaussianMixtureModel small_toy(std::size_t components = 1) {
  ToyMixtureSpec s;
  s.height = 8;
  s.width = 8;
  s.components = components;
  s.low_amplitude = 0.2;
  s.seed = 3;
  return make_toy_mixture(s);
}

}  // namespace

TEST(Kl, ClosedFormExamples) {
  EXPECT_NEAR(kl_to_standard_normal(with_moments(0.0, 1.0)), 0.0, 1e-12);
  EXPECT_NEAR(kl_to_standard_normal(with_moments(1.0, 1.0)), 0.5, 1e-12);
  EXPECT_NEAR(kl_to_standard_normal(with_moments(0.0, 2.0)), 0.153426, 1e-6);
  EXPECT_NEAR(kl_from_moments(0.0, 2.0), 0.5 * (1.0 - std::log(2.0)), 1e-15);
}

TEST(Kl, OrderInvariantAndNonnegative) {
  auto v = with_moments(0.3, 0.7, 257);
  const double kl = kl_to_standard_normal(v);
  std::shuffle(v.begin(), v.end(), std::mt19937_64(5));
  EXPECT_NEAR(kl_to_standard_normal(v), kl, 1e-13);
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Tensor t = rng.normal_like({20});
    EXPECT_GE(kl_to_standard_normal(t.values()), 0.0);
  }
}

TEST(Kl, Errors) {
  const std::vector<double> one{1.0};
  EXPECT_THROW(kl_to_standard_normal(one), NumericError);
  const std::vector<double> flat(10, 0.2);
  EXPECT_THROW(kl_to_standard_normal(flat), NumericError);
  const std::vector<double> bad{1.0, std::nan("")};
  EXPECT_THROW(kl_to_standard_normal(bad), NumericError);
}

TEST(Psnr, Examples) {
  const Tensor ref({4, 4, 1}, 0.5);
  EXPECT_EQ(psnr(ref, ref, 1.0), 99.0);
  EXPECT_NEAR(psnr(Tensor({4, 4, 1}, 1.5), ref, 1.0), 0.0, 1e-12);
  EXPECT_NEAR(psnr(Tensor({4, 4, 1}, 0.6), ref, 1.0), 20.0, 1e-9);
  EXPECT_NEAR(psnr_from_mse(0.01, 1.0), 20.0, 1e-12);
  EXPECT_THROW(psnr(Tensor({4, 4, 1}), Tensor({4, 4, 3}), 1.0), ShapeError);
  EXPECT_THROW(psnr(ref, ref, 0.0), ConfigError);
}

TEST(Report, CsvFormat) {
  ExperimentReport r;
  ReportRow a;
  a.condition = "plain";
  a.timestep = 40;
  a.mean = 0.25;
  a.variance = 1.5;
  a.kl = 0.125;
  ReportRow b = a;
  b.condition = "eta=0.5,t0=\"x\"";
  b.psnr = 20.0;
  b.l2 = 3.0;
  r.rows = {a, b};
  EXPECT_EQ(r.to_csv(),
            "condition,timestep,mean,variance,kl,psnr,l2,nll,consistency\r\n"
            "plain,40,0.25,1.5,0.125,,,,\r\n"
            "\"eta=0.5,t0=\"\"x\"\"\",40,0.25,1.5,0.125,20,3,,\r\n");
  const auto j = r.to_json();
  EXPECT_EQ(j["rows"].size(), 2u);
  EXPECT_TRUE(j["rows"][0]["psnr"].is_null());
  EXPECT_EQ(j["rows"][1]["psnr"].get<double>(), 20.0);
  EXPECT_EQ(r.rows_for("plain").size(), 1u);
  EXPECT_EQ(r.mean_kl("plain"), 0.125);
  EXPECT_THROW(r.mean_kl("missing"), ConfigError);
}

TEST(Deviation, ReproducibleAndShaped) {
  const NoiseSchedule s = linear_beta_schedule();
  const GaussianMixtureModel gmm = small_toy(2);
  const std::vector<DegradationSpec> sev{{IdentityDegradation{}, std::nullopt}, {SrBicubic{2}, std::nullopt},
                                         {SrBicubic{4}, std::nullopt}};
  InversionConfig cfg;
  cfg.steps = 6;
  cfg.t0 = 300;
  cfg.rng_seed = 12;
  const ExperimentReport a = deviation_experiment(gmm, s, sev, 3, cfg);
  const ExperimentReport b = deviation_experiment(gmm, s, sev, 3, cfg);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  EXPECT_EQ(a.config_digest, b.config_digest);
  ASSERT_EQ(a.rows.size(), 3u * 2u * 5u);
  EXPECT_EQ(a.rows[0].condition, "identity/ddim");
  EXPECT_EQ(a.rows[5].condition, "identity/da");
  EXPECT_EQ(a.rows[10].condition, "sr_bicubic_x2/ddim");
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_GE(a.rows[i].kl, 0.0);
    if (i % 5 != 0) {
      EXPECT_GT(a.rows[i].timestep, a.rows[i - 1].timestep);
    }
  }
  InversionConfig other = cfg;
  other.rng_seed = 13;
  EXPECT_NE(deviation_experiment(gmm, s, sev, 3, other).to_csv(), a.to_csv());
  EXPECT_THROW(deviation_experiment(gmm, s, {sev[0]}, 3, cfg), ConfigError);
  EXPECT_THROW(deviation_experiment(gmm, s, sev, 0, cfg), ConfigError);
}

TEST(Sweep, RowCountAndOrder) {
  const NoiseSchedule s = linear_beta_schedule();
  const GaussianMixtureModel gmm = small_toy();
  const auto op = build_operator({SrAverage{2}, std::nullopt}, gmm.shape);
  Rng rng(4);
  const std::vector<Tensor> ys{op->apply(gmm.sample(rng)), op->apply(gmm.sample(rng))};
  SweepConfig cfg;
  cfg.steps_inv = 5;
  cfg.steps_gen = 10;
  cfg.seed = 3;
  const std::vector<double> etas{0.0, 0.5, 1.0};
  const std::vector<int> t0s{100, 200, 300};
  const ExperimentReport r = tradeoff_sweep(gmm, s, *op, ys, etas, t0s, cfg);
  ASSERT_EQ(r.rows.size(), 9u);
  EXPECT_EQ(r.rows[0].condition, "eta=0,t0=100");
  EXPECT_EQ(r.rows[1].condition, "eta=0.5,t0=100");
  EXPECT_EQ(r.rows[3].condition, "eta=0,t0=200");
  for (const auto& row : r.rows) {
    ASSERT_TRUE(row.l2 && row.nll);
    EXPECT_GE(*row.l2, 0.0);
  }
  EXPECT_EQ(tradeoff_sweep(gmm, s, *op, ys, etas, t0s, cfg).to_csv(), r.to_csv());
  EXPECT_THROW(tradeoff_sweep(gmm, s, *op, ys, {}, t0s, cfg), ConfigError);
  EXPECT_THROW(tradeoff_sweep(gmm, s, *op, {}, etas, t0s, cfg), ConfigError);
  EXPECT_THROW(tradeoff_sweep(gmm, s, *op, ys, etas, {5}, cfg), ConfigError);
}

TEST(CompareInversions, ThreeRows) {
  const NoiseSchedule s = linear_beta_schedule();
  const GaussianMixtureModel gmm = small_toy();
  const GmmDenoiser d(gmm, s);
  const auto op = build_operator({SrAverage{2}, std::nullopt}, gmm.shape);
  Rng rng(4);
  const Tensor y = op->apply(gmm.sample(rng));
  InvertGenerateConfig cfg;
  cfg.inversion.rng_seed = 1;
  cfg.gen_seed = 2;
  const auto rows = compare_inversions(s, d, *op, y, cfg, &gmm);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].condition, "ddim");
  EXPECT_EQ(rows[1].condition, "ddpm");
  EXPECT_EQ(rows[2].condition, "da");
  for (const auto& r : rows) {
    EXPECT_TRUE(r.l2.has_value());
    EXPECT_TRUE(r.nll.has_value());
    EXPECT_EQ(r.timestep, 550);
  }
  EXPECT_FALSE(compare_inversions(s, d, *op, y, cfg)[0].nll.has_value());
}

TEST(NoiseSummary, AveragesSteps) {
  NoiseStats st;
  st.steps.push_back({0, 10, 0.1, 1.0, 0.2, false});
  st.steps.push_back({10, 20, 0.3, 3.0, 0.4, false});
  const ReportRow r = noise_summary_row("x", 20, st);
  EXPECT_NEAR(r.mean, 0.2, 1e-15);
  EXPECT_NEAR(r.variance, 2.0, 1e-15);
  EXPECT_NEAR(r.kl, 0.3, 1e-15);
  EXPECT_NEAR(st.mean_kl(), 0.3, 1e-15);
}

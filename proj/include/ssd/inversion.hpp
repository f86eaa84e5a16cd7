// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <string>
#include <vector>

#include "ssd/denoiser.hpp"
#include "ssd/operators.hpp"
#include "ssd/random.hpp"
#include "ssd/schedule.hpp"
#include "ssd/stats.hpp"

namespace ssd {

enum class InversionMethod { Ddim, Ddpm, Da };

inline const char* to_string(InversionMethod m) {
  switch (m) {
    case InversionMethod::Ddim: return "ddim";
    case InversionMethod::Ddpm: return "ddpm";
    case InversionMethod::Da: return "da";
  }
  return "?";
}

struct InversionConfig {
  double eta = 0.4;   // share of each step's noise drawn fresh
  int t0 = 550;       // shortcut timestep
  int steps = 15;     // grid points, including 0 and t0
  std::uint64_t rng_seed = 0;

  void validate(const NoiseSchedule& schedule) const {
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
    if (t0 < 1 || t0 >= schedule.total_steps()) throw ConfigError("t0 must lie in [1, T)");
    if (steps < 2) throw ConfigError("inversion needs at least 2 grid points");
    if (steps > t0 + 1) throw ConfigError("more inversion steps than timesteps below t0");
  }
};

/// Moments of the noise injected by one inversion step.
struct StepNoiseRecord {
  int t_from = 0;
  int t_to = 0;
  double mean = 0.0;
  double variance = 0.0;
  double kl = 0.0;
  bool clamped = false;  // 1 - abar - eta*beta went negative and was clamped to 0
};

struct NoiseStats {
  std::vector<StepNoiseRecord> steps;

  double mean_kl() const {
    if (steps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : steps) s += r.kl;
    return s / static_cast<double>(steps.size());
  }
};

/// Single-element noise has no variance (NaN, KL NaN); constant noise has KL = inf.
inline StepNoiseRecord noise_record(int t_from, int t_to, const Tensor& noise) {
  if (noise.size() < 2) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {t_from, t_to, noise[0], nan, nan, false};
  }
  const Moments m = sample_moments(noise.values());
  const double kl = m.variance > 0.0 ? kl_from_moments(m.mean, m.variance) : std::numeric_limits<double>::infinity();
  return {t_from, t_to, m.mean, m.variance, kl, false};
}

/// One denoiser evaluation at grid point t: eps_theta and the matching x0 estimate.
///
/// At t = 0 the sample is already clean, so x_{0|0} = x and eps_theta is taken at
/// the first noise level t = 1.
struct Prediction {
  Tensor eps;
  Tensor x0;
};

inline Prediction predict(const NoiseSchedule& schedule, const Denoiser& denoiser, const Tensor& x, int t) {
  Tensor eps = denoiser.predict_eps(x, std::max(t, 1));
  require_same_shape(x, eps, "denoiser output");
  if (t == 0) return {std::move(eps), x};
  Tensor x0 = x0_from_eps(schedule, x, eps, t);
  return {std::move(eps), std::move(x0)};
}

/// Coefficients of x_to = signal * x0 + eps_coef * eps + noise_coef * z.
struct DaCoefficients {
  double signal = 0.0;
  double eps_coef = 0.0;
  double noise_coef = 0.0;
  bool clamped = false;
};

inline DaCoefficients da_coefficients(double alpha_bar_to, double beta_eff, double eta) {
  DaCoefficients c;
  c.signal = std::sqrt(alpha_bar_to);
  double radicand = 1.0 - alpha_bar_to - eta * beta_eff;
  if (radicand < 0.0) {
    c.clamped = true;
    radicand = 0.0;
  }
  c.eps_coef = std::sqrt(radicand);
  c.noise_coef = std::sqrt(eta * beta_eff);
  return c;
}

struct InversionStepResult {
  Tensor x;
  StepNoiseRecord record;
};

namespace detail {

inline void check_forward_step(const NoiseSchedule& schedule, int t_from, int t_to) {
  if (t_from < 0 || t_to <= t_from || t_to > schedule.total_steps()) {
    throw ConfigError("inversion step must go forward: " + std::to_string(t_from) + " -> " + std::to_string(t_to));
  }
}

/// Shared DDIM / DA step. With eta == 0 no randomness is drawn and rng may be null.
inline InversionStepResult da_step(const NoiseSchedule& schedule, const Denoiser& denoiser, const Tensor& x,
                                   int t_from, int t_to, double eta, Rng* rng) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  check_forward_step(schedule, t_from, t_to);
  const Prediction p = predict(schedule, denoiser, x, t_from);
  const double ab_to = schedule.alpha_bar(t_to);
  const DaCoefficients c = da_coefficients(ab_to, schedule.effective_beta(t_from, t_to), eta);

  InversionStepResult out;
  if (eta == 0.0) {
    out.x = lincomb(c.signal, p.x0, c.eps_coef, p.eps);
    out.record = noise_record(t_from, t_to, p.eps);
  } else {
    if (rng == nullptr) throw ConfigError("DA inversion with eta > 0 needs a random source");
    const Tensor z = rng->normal_like(x.shape());
    out.x = lincomb(c.signal, p.x0, c.eps_coef, p.eps) + c.noise_coef * z;
    // eps_DA = (c_eps eps + c_z z) / sqrt(1 - abar_to)
    const double scale = 1.0 / std::sqrt(1.0 - ab_to);
    out.record = noise_record(t_from, t_to, lincomb(c.eps_coef * scale, p.eps, c.noise_coef * scale, z));
  }
  out.record.clamped = c.clamped;
  return out;
}

}  // namespace detail

/// x_to = sqrt(abar_to) f_theta(x) + sqrt(1 - abar_to) eps_theta(x). Deterministic.
inline Tensor ddim_inversion_step(const NoiseSchedule& schedule, const Denoiser& denoiser, const Tensor& x, int t_from,
                                  int t_to) {
  return detail::da_step(schedule, denoiser, x, t_from, t_to, 0.0, nullptr).x;
}

/// Forward noising over one grid step: sqrt(1 - beta_eff) x + sqrt(beta_eff) z.
inline InversionStepResult ddpm_inversion_step(const NoiseSchedule& schedule, const Tensor& x, int t_from, int t_to,
                                               Rng& rng) {
  detail::check_forward_step(schedule, t_from, t_to);
  const double beta = schedule.effective_beta(t_from, t_to);
  const Tensor z = rng.normal_like(x.shape());
  return {lincomb(std::sqrt(1.0 - beta), x, std::sqrt(beta), z), noise_record(t_from, t_to, z)};
}

/// Distortion-adaptive step:
///   x_to = sqrt(abar_to) f_theta + sqrt(1 - abar_to - eta beta) eps_theta + sqrt(eta beta) z
/// with beta = 1 - abar_to / abar_from. The record holds the moments of the
/// composite noise eps_DA. eta = 0 reproduces ddim_inversion_step bit for bit.
inline InversionStepResult da_inversion_step(const NoiseSchedule& schedule, const Denoiser& denoiser, const Tensor& x,
                                             int t_from, int t_to, double eta, Rng& rng) {
  return detail::da_step(schedule, denoiser, x, t_from, t_to, eta, &rng);
}

struct InversionResult {
  Tensor state;
  NoiseStats stats;
};

/// Runs the chosen inversion over make_grid(steps, t0), starting at x_start.
inline InversionResult invert_from(const NoiseSchedule& schedule, const Denoiser& denoiser, const Tensor& x_start,
                                   const InversionConfig& cfg, InversionMethod method) {
  cfg.validate(schedule);
  const TimestepGrid grid = make_grid(schedule, cfg.steps, cfg.t0);
  Rng rng(cfg.rng_seed);
  InversionResult result{x_start, {}};
  for (std::size_t s = 0; s + 1 < grid.size(); ++s) {
    const int from = grid.taus[s];
    const int to = grid.taus[s + 1];
    InversionStepResult step;
    switch (method) {
      case InversionMethod::Ddim: step = detail::da_step(schedule, denoiser, result.state, from, to, 0.0, nullptr); break;
      case InversionMethod::Ddpm: step = ddpm_inversion_step(schedule, result.state, from, to, rng); break;
      case InversionMethod::Da: step = da_inversion_step(schedule, denoiser, result.state, from, to, cfg.eta, rng); break;
    }
    result.state = std::move(step.x);
    result.stats.steps.push_back(step.record);
  }
  return result;
}

/// Inversion of a measurement: starts from H^+ y.
inline InversionResult invert(const NoiseSchedule& schedule, const Denoiser& denoiser, const LinearOperator& op,
                              const Tensor& y, const InversionConfig& cfg, InversionMethod method) {
  return invert_from(schedule, denoiser, op.pinv_apply(y), cfg, method);
}

/// Moments of eps_DA when eps_theta ~ N(mu, sigma2) elementwise:
///   mu_DA = sqrt(r) mu,  sigma2_DA = 1 + r (sigma2 - 1),  r = (1 - abar - eta beta) / (1 - abar).
struct DaNoiseMoments {
  double mean = 0.0;
  double variance = 1.0;
  bool clamped = false;
};

inline DaNoiseMoments theorem1_stats(double mu, double sigma2, double alpha_bar_to, double beta_eff, double eta) {
  if (!(sigma2 > 0.0)) throw ConfigError("sigma2 must be positive");
  double radicand = 1.0 - alpha_bar_to - eta * beta_eff;
  bool clamped = false;
  if (radicand < 0.0) {
    radicand = 0.0;
    clamped = true;
  }
  const double ratio = radicand / (1.0 - alpha_bar_to);
  return {std::sqrt(ratio) * mu, 1.0 + ratio * (sigma2 - 1.0), clamped};
}

inline DaNoiseMoments theorem1_stats(double mu, double sigma2, const NoiseSchedule& schedule, int t_from, int t_to,
                                     double eta) {
  return theorem1_stats(mu, sigma2, schedule.alpha_bar(t_to), schedule.effective_beta(t_from, t_to), eta);
}

}  // namespace ssd

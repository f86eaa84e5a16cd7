// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ssd/denoiser.hpp"
#include "ssd/inversion.hpp"
#include "ssd/operators.hpp"
#include "ssd/random.hpp"
#include "ssd/schedule.hpp"

namespace ssd {

/// Back projection is switched off for the last ceil(rho_stop * S_gen) generation steps.
struct SsdPlusConfig {
  bool enabled = false;
  double rho_stop = 0.2;
};

struct RestorationConfig {
  InversionConfig inversion;
  int steps_gen = 85;
  double ddim_eta = 0.0;
  SsdPlusConfig ssd_plus;
  std::uint64_t rng_seed = 0;

  /// Seeds generation with `seed` and inversion with a stream derived from it.
  RestorationConfig& seed_all(std::uint64_t seed) {
    rng_seed = seed;
    inversion.rng_seed = derive_seed(seed, 1);
    return *this;
  }

  void validate(const NoiseSchedule& schedule) const {
    inversion.validate(schedule);
    if (steps_gen < 2) throw ConfigError("generation needs at least 2 grid points");
    if (steps_gen > inversion.t0 + 1) throw ConfigError("more generation steps than timesteps below t0");
    if (!(ddim_eta >= 0.0)) throw ConfigError("ddim_eta must be nonnegative");
    if (!(ssd_plus.rho_stop >= 0.0 && ssd_plus.rho_stop <= 1.0)) throw ConfigError("rho_stop must lie in [0, 1]");
  }
};

/// DDIM variance: ddim_eta * sqrt((1 - abar_to) / (1 - abar_from)) * sqrt(1 - abar_from / abar_to).
inline double sigma_schedule(const NoiseSchedule& schedule, int t_from, int t_to, double ddim_eta) {
  if (t_to >= t_from) throw ConfigError("sigma_schedule expects t_to < t_from");
  if (ddim_eta == 0.0) return 0.0;
  const double ab_from = schedule.alpha_bar(t_from);
  const double ab_to = schedule.alpha_bar(t_to);
  return ddim_eta * std::sqrt((1.0 - ab_to) / (1.0 - ab_from)) * std::sqrt(1.0 - ab_from / ab_to);
}

namespace detail {

inline void check_reverse_step(const NoiseSchedule& schedule, int t_from, int t_to, double sigma) {
  if (t_to < 0 || t_from <= t_to || t_from > schedule.total_steps()) {
    throw ConfigError("generation step must go backward: " + std::to_string(t_from) + " -> " + std::to_string(t_to));
  }
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be nonnegative");
}

/// sqrt(abar_to) x0 + sqrt(1 - abar_to - sigma^2) eps + sigma z
inline Tensor reverse_update(const NoiseSchedule& schedule, const Tensor& x0, const Tensor& eps, int t_to, double sigma,
                             Rng& rng) {
  const double ab_to = schedule.alpha_bar(t_to);
  double radicand = 1.0 - ab_to - sigma * sigma;
  if (radicand < 0.0) {
    if (radicand < -1e-12) {
      throw NumericError("1 - abar_to - sigma^2 = " + std::to_string(radicand) + " is negative");
    }
    radicand = 0.0;
  }
  Tensor out = lincomb(std::sqrt(ab_to), x0, std::sqrt(radicand), eps);
  if (sigma > 0.0) {
    for (auto& v : out.values()) v += sigma * rng.normal();
  }
  return out;
}

}  // namespace detail

/// x_to = sqrt(abar_to) f_theta(x) + sqrt(1 - abar_to - sigma^2) eps_theta(x) + sigma z
inline Tensor ddim_generation_step(const NoiseSchedule& schedule, const Denoiser& denoiser, const Tensor& x, int t_from,
                                   int t_to, double sigma, Rng& rng) {
  detail::check_reverse_step(schedule, t_from, t_to, sigma);
  const Prediction p = predict(schedule, denoiser, x, t_from);
  return detail::reverse_update(schedule, p.x0, p.eps, t_to, sigma, rng);
}

/// Ancestral step t -> t-1:
///   (x - beta_t / sqrt(1 - abar_t) eps) / sqrt(1 - beta_t) + sqrt(beta_tilde) z,
///   beta_tilde = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
inline Tensor ddpm_generation_step(const NoiseSchedule& schedule, const Denoiser& denoiser, const Tensor& x, int t,
                                   Rng& rng) {
  if (t < 1 || t > schedule.total_steps()) throw ConfigError("ddpm_generation_step needs 1 <= t <= T");
  const double beta = schedule.beta(t);
  const double ab = schedule.alpha_bar(t);
  const double variance = (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - ab) * beta;
  const Tensor eps = denoiser.predict_eps(x, t);
  require_same_shape(x, eps, "denoiser output");
  Tensor out = lincomb(1.0 / std::sqrt(1.0 - beta), x, -beta / (std::sqrt(1.0 - ab) * std::sqrt(1.0 - beta)), eps);
  const double sd = std::sqrt(variance);
  for (auto& v : out.values()) v += sd * rng.normal();
  return out;
}

struct ProjectedStepResult {
  Tensor x;
  Tensor x0;  // the x0 estimate fed to the update (projected when project == true)
};

/// Denoise, optionally back-project the x0 estimate onto {H x = y}, then take
/// the DDIM update with the projected estimate and the same eps_theta.
inline ProjectedStepResult projected_generation_step(const NoiseSchedule& schedule, const Denoiser& denoiser,
                                                     const LinearOperator& op, const Tensor& y, const Tensor& x,
                                                     int t_from, int t_to, double sigma, bool project, Rng& rng) {
  detail::check_reverse_step(schedule, t_from, t_to, sigma);
  Prediction p = predict(schedule, denoiser, x, t_from);
  if (project) p.x0 = back_project(op, p.x0, y);
  Tensor next = detail::reverse_update(schedule, p.x0, p.eps, t_to, sigma, rng);
  return {std::move(next), std::move(p.x0)};
}

struct GenerationRecord {
  int t_from = 0;
  int t_to = 0;
  double sigma = 0.0;
  bool projected = false;
  double consistency = std::numeric_limits<double>::quiet_NaN();  // |H x0_hat - y|_inf when projected
};

struct RestorationResult {
  Tensor restored;
  Tensor transitional_state;
  NoiseStats stats;
  std::vector<GenerationRecord> trace;
};

/// Number of trailing generation steps without back projection.
inline int unprojected_tail(const RestorationConfig& cfg) {
  if (!cfg.ssd_plus.enabled) return 0;
  return static_cast<int>(std::ceil(cfg.ssd_plus.rho_stop * cfg.steps_gen - 1e-12));
}

/// Shortcut restoration: DA inversion from H^+ y to t0, then projected DDIM
/// generation back to t = 0 on a grid of steps_gen points.
inline RestorationResult ssd_restore(const NoiseSchedule& schedule, const Denoiser& denoiser, const LinearOperator& op,
                                     const Tensor& y, const RestorationConfig& cfg) {
  cfg.validate(schedule);
  InversionResult inv = invert(schedule, denoiser, op, y, cfg.inversion, InversionMethod::Da);

  RestorationResult result;
  result.transitional_state = inv.state;
  result.stats = std::move(inv.stats);

  const TimestepGrid grid = make_grid(schedule, cfg.steps_gen, cfg.inversion.t0);
  const int tail = unprojected_tail(cfg);
  Rng rng(cfg.rng_seed);
  Tensor x = std::move(inv.state);
  const auto n_steps = static_cast<int>(grid.size()) - 1;
  for (int k = 0; k < n_steps; ++k) {
    const int from = grid.taus[static_cast<std::size_t>(n_steps - k)];
    const int to = grid.taus[static_cast<std::size_t>(n_steps - k - 1)];
    const bool project = k < n_steps - tail;
    const double sigma = sigma_schedule(schedule, from, to, cfg.ddim_eta);
    ProjectedStepResult step = projected_generation_step(schedule, denoiser, op, y, x, from, to, sigma, project, rng);
    GenerationRecord rec{from, to, sigma, project};
    if (project) rec.consistency = max_abs_diff(op.apply(step.x0), y);
    result.trace.push_back(rec);
    x = std::move(step.x);
  }
  result.restored = std::move(x);
  return result;
}

/// Plain DDIM generation from x at grid.t0() down to 0, no projection.
inline Tensor generate(const NoiseSchedule& schedule, const Denoiser& denoiser, Tensor x, const TimestepGrid& grid,
                       double ddim_eta, Rng& rng) {
  for (std::size_t s = grid.size() - 1; s > 0; --s) {
    const int from = grid.taus[s];
    const int to = grid.taus[s - 1];
    x = ddim_generation_step(schedule, denoiser, x, from, to, sigma_schedule(schedule, from, to, ddim_eta), rng);
  }
  return x;
}

}  // namespace ssd

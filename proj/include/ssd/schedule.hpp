// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssd/errors.hpp"
#include "ssd/tensor.hpp"

namespace ssd {

/// Variance schedule beta_1..beta_T with cumulative products abar_0..abar_T.
///
/// Index 0 is the clean image: abar_0 = 1. abar_t = prod_{i<=t} (1 - beta_i)
/// and is strictly decreasing in t.
class NoiseSchedule {
 public:
  /// Takes betas for t = 1..T.
  explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw ConfigError("noise schedule needs at least one beta");
    alphas_cum_.resize(betas_.size() + 1);
    alphas_cum_[0] = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
      const double b = betas_[i];
      if (!(b > 0.0 && b < 1.0)) {
        throw ConfigError("beta_" + std::to_string(i + 1) + " = " + std::to_string(b) + " outside (0, 1)");
      }
      alphas_cum_[i + 1] = alphas_cum_[i] * (1.0 - b);
    }
  }

  int total_steps() const noexcept { return static_cast<int>(betas_.size()); }

  /// beta_t for 1 <= t <= T.
  double beta(int t) const {
    check_index(t, 1);
    return betas_[static_cast<std::size_t>(t - 1)];
  }

  /// abar_t for 0 <= t <= T.
  double alpha_bar(int t) const {
    check_index(t, 0);
    return alphas_cum_[static_cast<std::size_t>(t)];
  }

  /// One-jump variance across a coarse grid step: 1 - abar_to / abar_from.
  double effective_beta(int t_from, int t_to) const { return 1.0 - alpha_bar(t_to) / alpha_bar(t_from); }

  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alphas_cum() const noexcept { return alphas_cum_; }

 private:
  void check_index(int t, int lo) const {
    if (t < lo || t > total_steps()) {
      throw ConfigError("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                        std::to_string(total_steps()) + "]");
    }
  }

  std::vector<double> betas_;
  std::vector<double> alphas_cum_;
};

/// Linear betas from beta_start to beta_end inclusive.
inline NoiseSchedule linear_beta_schedule(int total_steps = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
  if (total_steps < 2) throw ConfigError("linear schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_end < 1.0)) throw ConfigError("beta endpoints must lie in (0, 1)");
  if (beta_start > beta_end) throw ConfigError("beta_start must not exceed beta_end");
  std::vector<double> betas(static_cast<std::size_t>(total_steps));
  const double last = static_cast<double>(total_steps - 1);
  for (int i = 0; i < total_steps; ++i) {
    const double f = static_cast<double>(i) / last;
    betas[static_cast<std::size_t>(i)] = beta_start * (1.0 - f) + beta_end * f;
  }
  return NoiseSchedule(std::move(betas));
}

/// Strictly increasing timesteps from 0 to t0.
struct TimestepGrid {
  std::vector<int> taus;

  int t0() const { return taus.back(); }
  std::size_t size() const noexcept { return taus.size(); }
};

/// `steps` points spaced uniformly over [0, t0] and rounded half-up.
inline TimestepGrid make_grid(const NoiseSchedule& schedule, int steps, int t0) {
  if (t0 < 1 || t0 >= schedule.total_steps()) {
    throw ConfigError("t0 = " + std::to_string(t0) + " must lie in [1, " + std::to_string(schedule.total_steps() - 1) +
                      "]");
  }
  if (steps < 2) throw ConfigError("a timestep grid needs at least 2 points");
  if (steps > t0 + 1) {
    throw ConfigError("cannot place " + std::to_string(steps) + " distinct timesteps in [0, " + std::to_string(t0) + "]");
  }
  TimestepGrid grid;
  grid.taus.reserve(static_cast<std::size_t>(steps));
  // round(i * t0 / (steps - 1)) with exact integer arithmetic
  const std::int64_t den = steps - 1;
  for (std::int64_t i = 0; i < steps; ++i) {
    const auto tau = static_cast<int>((2 * i * t0 + den) / (2 * den));
    if (grid.taus.empty() || tau > grid.taus.back()) grid.taus.push_back(tau);
  }
  grid.taus.back() = t0;
  return grid;
}

/// Forward noising in one jump: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& eps) {
  require_same_shape(x0, eps, "q_sample");
  const double ab = schedule.alpha_bar(t);
  return lincomb(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps);
}

}  // namespace ssd

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "ssd/errors.hpp"

namespace ssd {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
};

/// Two-pass sample mean and unbiased variance.
inline Moments sample_moments(std::span<const double> xs) {
  if (xs.size() < 2) throw NumericError("moments need at least 2 samples");
  double sum = 0.0;
  for (double v : xs) {
    if (!std::isfinite(v)) throw NumericError("non-finite sample");
    sum += v;
  }
  if (std::all_of(xs.begin(), xs.end(), [&](double v) { return v == xs[0]; })) return {xs[0], 0.0};
  const double mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double v : xs) ss += (v - mean) * (v - mean);
  return {mean, ss / static_cast<double>(xs.size() - 1)};
}

/// KL(N(mean, variance) || N(0, 1)).
inline double kl_from_moments(double mean, double variance) {
  if (!(variance > 0.0)) throw NumericError("KL needs a positive variance");
  return 0.5 * (variance + mean * mean - 1.0 - std::log(variance));
}

}  // namespace ssd

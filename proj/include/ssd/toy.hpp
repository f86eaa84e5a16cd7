// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssd/denoiser.hpp"
#include "ssd/errors.hpp"
#include "ssd/random.hpp"

namespace ssd {

/// Synthetic image mixture. Every component mean is a shared high-frequency
/// texture plus a component-specific low-frequency layout, both sums of
/// periodic cosines with random amplitude and phase; amplitudes fall off as
/// 1 / (1 + fx + fy). Covariances are isotropic with `variance`.
struct ToyMixtureSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  std::size_t components = 1;
  int low_cutoff = 2;         // frequencies with max(fx, fy) <= low_cutoff are "low"
  double low_amplitude = 0.5;
  double high_amplitude = 0.3;
  double variance = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (height == 0 || width == 0) throw ConfigError("toy image size must be positive");
    if (channels != 1 && channels != 3) throw ConfigError("toy images have 1 or 3 channels");
    if (components == 0) throw ConfigError("toy mixture needs at least one component");
    if (low_cutoff < 0) throw ConfigError("low_cutoff must be nonnegative");
    if (!(low_amplitude >= 0.0) || !(high_amplitude >= 0.0)) throw ConfigError("amplitudes must be nonnegative");
    if (!(variance > 0.0)) throw ConfigError("toy variance must be positive");
  }

  nlohmann::json to_json() const {
    return {{"height", height},         {"width", width},         {"channels", channels},
            {"components", components}, {"low_cutoff", low_cutoff}, {"low_amplitude", low_amplitude},
            {"high_amplitude", high_amplitude}, {"variance", variance}, {"seed", seed}};
  }

  static ToyMixtureSpec from_json(const nlohmann::json& j) {
    ToyMixtureSpec s;
    if (!j.is_object()) throw ConfigError("toy mixture spec must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      try {
        if (k == "height") s.height = it->get<std::size_t>();
        else if (k == "width") s.width = it->get<std::size_t>();
        else if (k == "channels") s.channels = it->get<std::size_t>();
        else if (k == "components") s.components = it->get<std::size_t>();
        else if (k == "low_cutoff") s.low_cutoff = it->get<int>();
        else if (k == "low_amplitude") s.low_amplitude = it->get<double>();
        else if (k == "high_amplitude") s.high_amplitude = it->get<double>();
        else if (k == "variance") s.variance = it->get<double>();
        else if (k == "seed") s.seed = it->get<std::uint64_t>();
        else throw ConfigError("unknown toy mixture key '" + k + "'");
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("toy mixture key '" + k + "': " + e.what());
      }
    }
    s.validate();
    return s;
  }
};

namespace detail {

inline void add_cosines(std::vector<double>& dst, const ToyMixtureSpec& spec, Rng& rng, bool low) {
  const auto h = static_cast<int>(spec.height);
  const auto w = static_cast<int>(spec.width);
  const auto c = static_cast<int>(spec.channels);
  for (int ch = 0; ch < c; ++ch) {
    for (int fy = 0; fy <= h / 2; ++fy) {
      for (int fx = 0; fx <= w / 2; ++fx) {
        if ((std::max(fx, fy) <= spec.low_cutoff) != low) continue;
        const double amp = rng.normal() * (low ? spec.low_amplitude : spec.high_amplitude) / (1.0 + fx + fy);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            const double arg = 2.0 * std::numbers::pi * (static_cast<double>(fy * i) / h + static_cast<double>(fx * j) / w);
            dst[static_cast<std::size_t>((i * w + j) * c + ch)] += amp * std::cos(arg + phase);
          }
        }
      }
    }
  }
}

}  // namespace detail

inline GaussianMixtureModel make_toy_mixture(const ToyMixtureSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  GaussianMixtureModel gmm;
  gmm.shape = {spec.height, spec.width, spec.channels};
  const std::size_t d = spec.height * spec.width * spec.channels;
  std::vector<double> texture(d, 0.0);
  detail::add_cosines(texture, spec, rng, false);
  for (std::size_t k = 0; k < spec.components; ++k) {
    std::vector<double> mean = texture;
    detail::add_cosines(mean, spec, rng, true);
    gmm.means.push_back(std::move(mean));
    gmm.variances.emplace_back(d, spec.variance);
    gmm.weights.push_back(1.0 / static_cast<double>(spec.components));
  }
  gmm.validate();
  return gmm;
}

}  // namespace ssd

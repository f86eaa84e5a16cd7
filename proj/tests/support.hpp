// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>

#include "ssd/ssd.hpp"

namespace ssd::testkit {

/// Returns the same value for every element.
class ConstantDenoiser final : public Denoiser {
 public:
  explicit ConstantDenoiser(double value) : value_(value) {}
  Tensor predict_eps(const Tensor& x_t, int) const override { return Tensor(x_t.shape(), value_); }

 private:
  double value_;
};

/// Deterministic but arbitrary eps: a fixed nonlinear scramble of (x_t, t).
class ScrambleDenoiser final : public Denoiser {
 public:
  explicit ScrambleDenoiser(double scale = 10.0) : scale_(scale) {}
  Tensor predict_eps(const Tensor& x_t, int t) const override {
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = scale_ * std::sin(37.0 * x_t[i] + 0.013 * t + 1.7 * static_cast<double>(i));
    }
    return out;
  }

 private:
  double scale_;
};

/// Wraps a callable.
class LambdaDenoiser final : public Denoiser {
 public:
  using Fn = std::function<Tensor(const Tensor&, int)>;
  explicit LambdaDenoiser(Fn fn) : fn_(std::move(fn)) {}
  Tensor predict_eps(const Tensor& x_t, int t) const override { return fn_(x_t, t); }

 private:
  Fn fn_;
};

/// Two-level schedule with abar_1 = 0.5 and abar_2 = 0.49.
inline NoiseSchedule scalar_schedule() { return NoiseSchedule({0.5, 0.02}); }

/// The 16x16 three-component toy used across tests.
inline ToyMixtureSpec main_toy_spec() {
  ToyMixtureSpec s;
  s.components = 3;
  s.low_amplitude = 0.2;
  s.high_amplitude = 0.3;
  s.variance = 1e-3;
  s.seed = 7;
  return s;
}

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t = rng.normal_like(shape);
  for (auto& v : t.values()) v *= scale;
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ssd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ssd::testkit

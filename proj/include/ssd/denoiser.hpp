// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssd/errors.hpp"
#include "ssd/random.hpp"
#include "ssd/schedule.hpp"
#include "ssd/tensor.hpp"

namespace ssd {

/// Noise predictor eps_theta(x_t, t). Output has the shape of x_t.
///
/// Implementations must be deterministic for a fixed (x_t, t) and safe to call
/// from several threads at once.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor predict_eps(const Tensor& x_t, int t) const = 0;
};

/// x0 estimate from a noisy sample and its predicted noise.
inline Tensor x0_from_eps(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps, int t) {
  if (t < 1) throw ConfigError("x0 prediction is undefined at t = 0");
  require_same_shape(x_t, eps, "x0_from_eps");
  const double ab = schedule.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  return lincomb(inv, x_t, -std::sqrt(1.0 - ab) * inv, eps);
}

/// f_theta(x_t, t) = (x_t - sqrt(1 - abar_t) eps_theta(x_t, t)) / sqrt(abar_t).
inline Tensor f_theta(const NoiseSchedule& schedule, const Denoiser& denoiser, const Tensor& x_t, int t) {
  if (t < 1) throw ConfigError("f_theta is undefined at t = 0 (x_{0|0} is x_0 itself)");
  const Tensor eps = denoiser.predict_eps(x_t, t);
  require_same_shape(x_t, eps, "denoiser output");
  return x0_from_eps(schedule, x_t, eps, t);
}

inline constexpr double kVarianceFloor = 1e-12;

/// Mixture of diagonal Gaussians over flattened tensors of `shape`.
struct GaussianMixtureModel {
  Shape shape;
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> variances;

  std::size_t dim() const { return shape_size(shape); }
  std::size_t components() const { return weights.size(); }

  /// Checks the invariants and floors zero variances to kVarianceFloor.
  void validate() {
    if (shape.empty() || dim() == 0) throw ConfigError("GMM shape must be non-empty");
    if (weights.empty()) throw ConfigError("GMM needs at least one component");
    if (means.size() != weights.size() || variances.size() != weights.size()) {
      throw ConfigError("GMM weights, means and variances disagree on the component count");
    }
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("GMM weights must be finite and nonnegative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("GMM weights sum to " + std::to_string(total) + ", not 1");
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (means[k].size() != dim() || variances[k].size() != dim()) {
        throw ConfigError("GMM component " + std::to_string(k) + " has the wrong dimension");
      }
      for (double m : means[k]) {
        if (!std::isfinite(m)) throw ConfigError("GMM means must be finite");
      }
      for (double& v : variances[k]) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("GMM variances must be finite and nonnegative");
        v = std::max(v, kVarianceFloor);
      }
    }
  }

  Tensor sample(Rng& rng) const {
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const std::size_t k = pick(rng.engine());
    Tensor x(shape);
    for (std::size_t i = 0; i < dim(); ++i) x[i] = means[k][i] + std::sqrt(variances[k][i]) * rng.normal();
    return x;
  }

  /// log p(x) under the mixture.
  double log_density(const Tensor& x) const {
    if (x.size() != dim()) throw ShapeError("GMM log_density: dimension mismatch");
    std::vector<double> logs(components());
    for (std::size_t k = 0; k < components(); ++k) {
      double lp = weights[k] > 0.0 ? std::log(weights[k]) : -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < dim(); ++i) {
        const double v = variances[k][i];
        const double r = x[i] - means[k][i];
        lp -= 0.5 * (std::log(2.0 * std::numbers::pi * v) + r * r / v);
      }
      logs[k] = lp;
    }
    const double top = *std::max_element(logs.begin(), logs.end());
    double acc = 0.0;
    for (double l : logs) acc += std::exp(l - top);
    return top + std::log(acc);
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"shape", shape}, {"weights", weights}, {"means", means}, {"variances", variances}};
  }

  static GaussianMixtureModel from_json(const nlohmann::json& j) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() != "shape" && it.key() != "weights" && it.key() != "means" && it.key() != "variances") {
        throw ConfigError("unknown GMM key '" + it.key() + "'");
      }
    }
    GaussianMixtureModel gmm;
    try {
      gmm.shape = j.at("shape").get<Shape>();
      gmm.weights = j.at("weights").get<std::vector<double>>();
      gmm.means = j.at("means").get<std::vector<std::vector<double>>>();
      gmm.variances = j.at("variances").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed GMM spec: ") + e.what());
    }
    gmm.validate();
    return gmm;
  }

  static GaussianMixtureModel load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open GMM spec " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("GMM spec " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write GMM spec " + path.string());
    out << to_json().dump(1) << '\n';
    if (!out) throw IoError("failed writing GMM spec " + path.string());
  }
};

/// E[x0 | x_t] under the mixture prior, with the forward process at level t.
///
/// Responsibilities are w_k N(x_t; sqrt(abar) m_k, abar S_k + (1 - abar) I),
/// normalized in log space.
inline Tensor gmm_posterior_mean(const GaussianMixtureModel& gmm, const NoiseSchedule& schedule, const Tensor& x_t,
                                 int t) {
  if (t < 1) throw ConfigError("GMM denoiser queried at t = 0; there is no noise to predict");
  if (x_t.size() != gmm.dim()) {
    throw ShapeError("GMM denoiser: input has " + std::to_string(x_t.size()) + " elements, model has " +
                     std::to_string(gmm.dim()));
  }
  const double ab = schedule.alpha_bar(t);
  const double sab = std::sqrt(ab);
  const double noise_var = 1.0 - ab;
  const std::size_t d = gmm.dim();
  const std::size_t kc = gmm.components();

  std::vector<double> log_resp(kc);
  for (std::size_t k = 0; k < kc; ++k) {
    double lp = gmm.weights[k] > 0.0 ? std::log(gmm.weights[k]) : -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < d; ++i) {
      const double c = ab * std::max(gmm.variances[k][i], kVarianceFloor) + noise_var;
      const double r = x_t[i] - sab * gmm.means[k][i];
      lp -= 0.5 * (std::log(c) + r * r / c);
    }
    log_resp[k] = lp;
  }
  const double top = *std::max_element(log_resp.begin(), log_resp.end());
  if (!std::isfinite(top)) throw NumericError("GMM responsibilities are not finite");
  double norm = 0.0;
  for (auto& l : log_resp) {
    l = std::exp(l - top);
    norm += l;
  }

  Tensor mean(x_t.shape());
  for (std::size_t k = 0; k < kc; ++k) {
    const double r_k = log_resp[k] / norm;
    if (r_k == 0.0) continue;
    for (std::size_t i = 0; i < d; ++i) {
      const double s = std::max(gmm.variances[k][i], kVarianceFloor);
      const double gain = sab * s / (ab * s + noise_var);
      mean[i] += r_k * (gmm.means[k][i] + gain * (x_t[i] - sab * gmm.means[k][i]));
    }
  }
  if (!all_finite(mean)) throw NumericError("GMM posterior mean is not finite");
  return mean;
}

/// Exact noise prediction (x_t - sqrt(abar) E[x0|x_t]) / sqrt(1 - abar).
inline Tensor gmm_predict_eps(const GaussianMixtureModel& gmm, const NoiseSchedule& schedule, const Tensor& x_t, int t) {
  const Tensor x0 = gmm_posterior_mean(gmm, schedule, x_t, t);
  const double ab = schedule.alpha_bar(t);
  Tensor eps = lincomb(1.0 / std::sqrt(1.0 - ab), x_t, -std::sqrt(ab) / std::sqrt(1.0 - ab), x0);
  if (!all_finite(eps)) throw NumericError("GMM noise prediction is not finite");
  return eps;
}

/// Analytic denoiser for data drawn from a Gaussian mixture.
class GmmDenoiser final : public Denoiser {
 public:
  GmmDenoiser(GaussianMixtureModel gmm, NoiseSchedule schedule)
      : gmm_(std::move(gmm)), schedule_(std::move(schedule)) {
    gmm_.validate();
  }

  Tensor predict_eps(const Tensor& x_t, int t) const override {
    return gmm_predict_eps(gmm_, schedule_, x_t, t).reshaped(x_t.shape());
  }

  const GaussianMixtureModel& model() const noexcept { return gmm_; }

 private:
  GaussianMixtureModel gmm_;
  NoiseSchedule schedule_;
};

}  // namespace ssd

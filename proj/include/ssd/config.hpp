// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssd/errors.hpp"
#include "ssd/generation.hpp"
#include "ssd/inversion.hpp"
#include "ssd/operators.hpp"
#include "ssd/schedule.hpp"
#include "ssd/toy.hpp"

namespace ssd {

namespace detail {

inline void require_object(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       const std::string& where) {
  require_object(j, where);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (auto a : allowed) known = known || it.key() == a;
    if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

struct ScheduleConfig {
  int total_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const { return linear_beta_schedule(total_steps, beta_start, beta_end); }
};

struct DenoiserConfig {
  std::string kind = "gmm";  // "gmm" or "external"
  std::filesystem::path gmm_path;
  std::vector<std::string> command;
  int timeout_ms = 30000;
};

struct IoConfig {
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path stats_out;
  std::filesystem::path reference;
  bool clean_input = false;  // input is a clean image to be degraded by the operator
};

struct ExperimentConfig {
  std::vector<DegradationSpec> severities;
  std::size_t n_samples = 8;
  std::vector<double> eta_grid{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<int> t0_grid{400, 550, 750};
  std::size_t n_measurements = 4;
};

struct ToyConfig {
  std::optional<ToyMixtureSpec> mixture;  // generator; otherwise denoiser.gmm_path is sampled
  std::size_t n_samples = 16;
  std::filesystem::path output_dir;
};

/// Inversion defaults for an operator: colorization uses eta 0.8, t0 750; the rest eta 0.4, t0 550.
inline InversionConfig default_inversion_for(const DegradationSpec& spec) {
  InversionConfig c;
  if (std::holds_alternative<Colorization>(spec.kind)) {
    c.eta = 0.8;
    c.t0 = 750;
  }
  return c;
}

struct RunConfig {
  ScheduleConfig schedule;
  DegradationSpec op{IdentityDegradation{}, std::nullopt};
  InversionConfig inversion;
  int steps_gen = 85;
  double ddim_eta = 0.0;
  SsdPlusConfig ssd_plus;
  DenoiserConfig denoiser;
  std::uint64_t seed = 0;
  IoConfig io;
  std::optional<Shape> image_shape;
  ExperimentConfig experiment;
  ToyConfig toy;

  RestorationConfig restoration() const {
    RestorationConfig r;
    r.inversion = inversion;
    r.steps_gen = steps_gen;
    r.ddim_eta = ddim_eta;
    r.ssd_plus = ssd_plus;
    r.seed_all(seed);
    return r;
  }

  /// Parses a config document. Relative paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    using detail::check_keys;
    using detail::read_opt;
    check_keys(j,
               {"schedule", "operator", "inversion", "generation", "denoiser", "seed", "io", "image_shape",
                "experiment", "toy"},
               "config");
    RunConfig c;
    auto resolve = [&](const std::filesystem::path& p) {
      return p.empty() || p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };

    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      check_keys(s, {"T", "beta_start", "beta_end"}, "schedule");
      read_opt(s, "T", c.schedule.total_steps, "schedule");
      read_opt(s, "beta_start", c.schedule.beta_start, "schedule");
      read_opt(s, "beta_end", c.schedule.beta_end, "schedule");
    }
    if (j.contains("operator")) c.op = DegradationSpec::from_json(j["operator"]);
    c.inversion = default_inversion_for(c.op);
    if (j.contains("inversion")) {
      const auto& s = j["inversion"];
      check_keys(s, {"eta", "t0", "steps"}, "inversion");
      read_opt(s, "eta", c.inversion.eta, "inversion");
      read_opt(s, "t0", c.inversion.t0, "inversion");
      read_opt(s, "steps", c.inversion.steps, "inversion");
    }
    if (j.contains("generation")) {
      const auto& s = j["generation"];
      check_keys(s, {"steps", "ddim_eta", "ssd_plus"}, "generation");
      read_opt(s, "steps", c.steps_gen, "generation");
      read_opt(s, "ddim_eta", c.ddim_eta, "generation");
      if (s.contains("ssd_plus")) {
        const auto& p = s["ssd_plus"];
        check_keys(p, {"enabled", "rho_stop"}, "generation.ssd_plus");
        read_opt(p, "enabled", c.ssd_plus.enabled, "generation.ssd_plus");
        read_opt(p, "rho_stop", c.ssd_plus.rho_stop, "generation.ssd_plus");
      }
    }
    if (j.contains("denoiser")) {
      const auto& s = j["denoiser"];
      check_keys(s, {"kind", "gmm_path", "command", "timeout_ms"}, "denoiser");
      read_opt(s, "kind", c.denoiser.kind, "denoiser");
      std::string gmm_path;
      read_opt(s, "gmm_path", gmm_path, "denoiser");
      c.denoiser.gmm_path = resolve(gmm_path);
      read_opt(s, "command", c.denoiser.command, "denoiser");
      read_opt(s, "timeout_ms", c.denoiser.timeout_ms, "denoiser");
    }
    read_opt(j, "seed", c.seed, "config");
    if (j.contains("io")) {
      const auto& s = j["io"];
      check_keys(s, {"input", "output", "stats_out", "reference", "clean_input"}, "io");
      read_opt(s, "clean_input", c.io.clean_input, "io");
      for (auto [key, dst] : {std::pair{"input", &c.io.input}, std::pair{"output", &c.io.output},
                              std::pair{"stats_out", &c.io.stats_out}, std::pair{"reference", &c.io.reference}}) {
        std::string v;
        read_opt(s, key, v, "io");
        *dst = resolve(v);
      }
    }
    if (j.contains("image_shape")) {
      Shape shape;
      read_opt(j, "image_shape", shape, "config");
      c.image_shape = shape;
    }
    if (j.contains("experiment")) {
      const auto& s = j["experiment"];
      check_keys(s, {"severities", "n_samples", "eta_grid", "t0_grid", "n_measurements"}, "experiment");
      if (s.contains("severities")) {
        if (!s["severities"].is_array()) throw ConfigError("experiment.severities must be an array");
        for (const auto& e : s["severities"]) c.experiment.severities.push_back(DegradationSpec::from_json(e));
      }
      read_opt(s, "n_samples", c.experiment.n_samples, "experiment");
      read_opt(s, "eta_grid", c.experiment.eta_grid, "experiment");
      read_opt(s, "t0_grid", c.experiment.t0_grid, "experiment");
      read_opt(s, "n_measurements", c.experiment.n_measurements, "experiment");
    }
    if (j.contains("toy")) {
      const auto& s = j["toy"];
      check_keys(s, {"mixture", "n_samples", "output_dir"}, "toy");
      if (s.contains("mixture")) c.toy.mixture = ToyMixtureSpec::from_json(s["mixture"]);
      read_opt(s, "n_samples", c.toy.n_samples, "toy");
      std::string dir;
      read_opt(s, "output_dir", dir, "toy");
      c.toy.output_dir = resolve(dir);
    }
    c.validate();
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(j, path.parent_path());
  }

  /// Checks values that do not depend on which command runs.
  void validate() const {
    const NoiseSchedule s = schedule.build();
    restoration().validate(s);
    if (denoiser.kind != "gmm" && denoiser.kind != "external") {
      throw ConfigError("denoiser.kind must be \"gmm\" or \"external\", got \"" + denoiser.kind + "\"");
    }
    if (denoiser.kind == "external" && denoiser.command.empty()) {
      throw ConfigError("denoiser.command is required for an external denoiser");
    }
    if (denoiser.timeout_ms <= 0) throw ConfigError("denoiser.timeout_ms must be positive");
    if (image_shape) {
      if (image_shape->size() != 3 || (*image_shape)[0] == 0 || (*image_shape)[1] == 0 ||
          ((*image_shape)[2] != 1 && (*image_shape)[2] != 3)) {
        throw ConfigError("image_shape must be [H, W, 1|3]");
      }
    }
    if (experiment.n_samples == 0) throw ConfigError("experiment.n_samples must be positive");
    if (experiment.n_measurements == 0) throw ConfigError("experiment.n_measurements must be positive");
    for (double e : experiment.eta_grid) {
      if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("experiment.eta_grid values must lie in [0, 1]");
    }
    for (int t : experiment.t0_grid) {
      if (t < 1 || t >= s.total_steps()) throw ConfigError("experiment.t0_grid values must lie in [1, T)");
    }
    if (toy.n_samples == 0) throw ConfigError("toy.n_samples must be positive");
  }
};

}  // namespace ssd

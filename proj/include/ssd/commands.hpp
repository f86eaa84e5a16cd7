// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssd/config.hpp"
#include "ssd/denoiser.hpp"
#include "ssd/diagnostics.hpp"
#include "ssd/errors.hpp"
#include "ssd/external_denoiser.hpp"
#include "ssd/generation.hpp"
#include "ssd/operators.hpp"
#include "ssd/parallel.hpp"
#include "ssd/tensorio.hpp"
#include "ssd/toy.hpp"

namespace ssd {

enum class Command { Restore, CompareInversions, Deviation, Sweep, MakeToy };

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

namespace cli {

/// Failure after validation; maps to kExitRuntime.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class F>
int guarded_run(F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    throw RuntimeFailure(e.what());
  }
  return kExitOk;
}

inline bool is_raw_path(const std::filesystem::path& p) { return p.extension() == ".ssdt"; }

inline Tensor load_tensor(const std::filesystem::path& p) { return is_raw_path(p) ? load_raw(p) : load_png(p); }

inline void save_tensor(const Tensor& t, const std::filesystem::path& p) {
  if (is_raw_path(p)) {
    save_raw(t, p);
  } else {
    save_png(t, p);
  }
}

inline void require_path(const std::filesystem::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string(what) + " is required");
}

inline void require_existing(const std::filesystem::path& p, const char* what) {
  require_path(p, what);
  if (!std::filesystem::is_regular_file(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

inline void require_writable_parent(const std::filesystem::path& p, const char* what) {
  require_path(p, what);
  const auto parent = p.parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw ConfigError(std::string(what) + " directory does not exist: " + parent.string());
  }
}

/// CSV goes to `stats_out`, the JSON mirror next to it with a .json extension.
inline std::filesystem::path json_mirror_path(const std::filesystem::path& stats_out) {
  auto p = stats_out;
  p.replace_extension(".json");
  if (p == stats_out) throw ConfigError("io.stats_out must not end in .json (the JSON mirror goes there)");
  return p;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + p.string() + "' failed");
}

inline void write_report(const ExperimentReport& report, const std::filesystem::path& stats_out) {
  write_text(stats_out, report.to_csv());
  write_text(json_mirror_path(stats_out), report.to_json().dump(2) + "\n");
}

struct Prepared {
  RunConfig cfg;
  NoiseSchedule schedule;
  std::optional<GaussianMixtureModel> gmm;
};

inline Prepared prepare_common(const CommandOptions& opts) {
  require_existing(opts.config, "config file");
  Prepared p{RunConfig::load(opts.config), linear_beta_schedule(), std::nullopt};
  if (opts.seed) p.cfg.seed = *opts.seed;
  p.schedule = p.cfg.schedule.build();
  thread_budget();
  return p;
}

inline void load_gmm(Prepared& p) {
  require_existing(p.cfg.denoiser.gmm_path, "denoiser.gmm_path");
  p.gmm = GaussianMixtureModel::load(p.cfg.denoiser.gmm_path);
}

inline void require_gmm(Prepared& p, const char* command) {
  if (p.cfg.denoiser.kind != "gmm") throw ConfigError(std::string(command) + " needs denoiser.kind \"gmm\"");
  load_gmm(p);
}

inline std::unique_ptr<Denoiser> make_denoiser(const Prepared& p) {
  if (p.gmm) return std::make_unique<GmmDenoiser>(*p.gmm, p.schedule);
  return std::make_unique<ExternalDenoiserClient>(p.cfg.denoiser.command, p.cfg.denoiser.timeout_ms);
}

/// Input side of restore and compare-inversions.
struct MeasurementSetup {
  Shape image_shape;
  OperatorPtr op;
  Tensor y;
  std::optional<Tensor> reference;
};

inline MeasurementSetup prepare_measurement(Prepared& p) {
  const RunConfig& c = p.cfg;
  if (c.denoiser.kind == "gmm") load_gmm(p);
  require_existing(c.io.input, "io.input");
  if (!c.io.reference.empty()) require_existing(c.io.reference, "io.reference");

  Tensor input = load_tensor(c.io.input);
  MeasurementSetup m;
  const bool same_space = std::holds_alternative<IdentityDegradation>(c.op.kind);
  if (c.image_shape) {
    m.image_shape = *c.image_shape;
  } else if (p.gmm) {
    m.image_shape = p.gmm->shape;
  } else if (c.io.clean_input || same_space) {
    m.image_shape = input.shape();
  } else {
    throw ConfigError("image_shape is required when it cannot be taken from the mixture or the input");
  }
  if (p.gmm && p.gmm->shape != m.image_shape) {
    throw ConfigError("image_shape " + shape_string(m.image_shape) + " differs from the mixture shape " +
                      shape_string(p.gmm->shape));
  }
  c.op.validate(m.image_shape);
  m.op = build_operator(c.op, m.image_shape);

  if (c.io.clean_input) {
    if (input.shape() != m.image_shape) {
      throw ConfigError("clean input " + c.io.input.string() + " has shape " + shape_string(input.shape()) +
                        ", expected " + shape_string(m.image_shape));
    }
    Rng rng(derive_seed(c.seed, 3));
    m.y = degrade(*m.op, c.op, input, rng).y;
  } else {
    try {
      m.y = m.op->measurement_from_image(input);
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("io.input ") + c.io.input.string() + ": " + e.what());
    }
  }
  if (!c.io.reference.empty()) {
    Tensor ref = load_tensor(c.io.reference);
    if (ref.shape() != m.image_shape) {
      throw ConfigError("io.reference has shape " + shape_string(ref.shape()) + ", expected " +
                        shape_string(m.image_shape));
    }
    m.reference = std::move(ref);
  }
  return m;
}

inline void check_output_format(const std::filesystem::path& out, const Shape& shape) {
  if (!is_raw_path(out)) {
    try {
      check_image_shape(shape);
    } catch (const ShapeError& e) {
      throw ConfigError("io.output " + out.string() + " needs an .ssdt extension: " + e.what());
    }
  }
}

inline std::string config_digest(const RunConfig& c, const std::filesystem::path& config_path) {
  std::ifstream in(config_path, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a_hex(text + "#seed=" + std::to_string(c.seed));
}

// ---------------------------------------------------------------------------

inline int restore(const CommandOptions& opts, std::ostream& log) {
  Prepared p = prepare_common(opts);
  MeasurementSetup m = prepare_measurement(p);
  require_writable_parent(p.cfg.io.output, "io.output");
  check_output_format(p.cfg.io.output, m.image_shape);
  if (!p.cfg.io.stats_out.empty()) {
    require_writable_parent(p.cfg.io.stats_out, "io.stats_out");
    json_mirror_path(p.cfg.io.stats_out);
  }
  const RestorationConfig rc = p.cfg.restoration();
  rc.validate(p.schedule);

  return guarded_run([&] {
    const auto denoiser = make_denoiser(p);
    const RestorationResult r = ssd_restore(p.schedule, *denoiser, *m.op, m.y, rc);
    save_tensor(r.restored, p.cfg.io.output);

    ExperimentReport report;
    report.seed = p.cfg.seed;
    report.config_digest = config_digest(p.cfg, opts.config);
    for (const auto& s : r.stats.steps) {
      report.rows.push_back({"inversion/da", s.t_to, s.mean, s.variance, s.kl, {}, {}, {}, {}});
    }
    ReportRow last = noise_summary_row("restored", 0, r.stats);
    if (m.reference) last.psnr = psnr(r.restored, *m.reference, 2.0);
    last.l2 = l2_distance(r.restored, m.op->pinv_apply(m.y));
    if (p.gmm) last.nll = gmm_nll(*p.gmm, r.restored);
    last.consistency = max_abs_diff(m.op->apply(r.restored), m.y);
    report.rows.push_back(last);
    if (!p.cfg.io.stats_out.empty()) write_report(report, p.cfg.io.stats_out);

    if (!opts.quiet) {
      log << "restored " << shape_string(r.restored.shape()) << " -> " << p.cfg.io.output.string()
          << "  mean KL " << detail::format_number(last.kl) << "  |Hx-y|_inf "
          << detail::format_number(*last.consistency);
      if (last.psnr) log << "  PSNR " << detail::format_number(*last.psnr) << " dB";
      log << '\n';
    }
  });
}

inline int compare_inversions_cmd(const CommandOptions& opts, std::ostream& log) {
  Prepared p = prepare_common(opts);
  MeasurementSetup m = prepare_measurement(p);
  require_writable_parent(p.cfg.io.stats_out, "io.stats_out");
  json_mirror_path(p.cfg.io.stats_out);
  InvertGenerateConfig ig;
  ig.inversion = p.cfg.inversion;
  ig.inversion.rng_seed = derive_seed(p.cfg.seed, 1);
  ig.steps_gen = p.cfg.steps_gen;
  ig.ddim_eta = p.cfg.ddim_eta;
  ig.gen_seed = p.cfg.seed;
  p.cfg.restoration().validate(p.schedule);

  return guarded_run([&] {
    const auto denoiser = make_denoiser(p);
    ExperimentReport report;
    report.seed = p.cfg.seed;
    report.config_digest = config_digest(p.cfg, opts.config);
    report.rows = compare_inversions(p.schedule, *denoiser, *m.op, m.y, ig, p.gmm ? &*p.gmm : nullptr);
    write_report(report, p.cfg.io.stats_out);
    if (!opts.quiet) {
      for (const auto& r : report.rows) {
        log << r.condition << "  L2 " << detail::format_number(*r.l2);
        if (r.nll) log << "  NLL " << detail::format_number(*r.nll);
        log << "  mean KL " << detail::format_number(r.kl) << '\n';
      }
    }
  });
}

inline int deviation_cmd(const CommandOptions& opts, std::ostream& log) {
  Prepared p = prepare_common(opts);
  require_gmm(p, "deviation");
  require_writable_parent(p.cfg.io.stats_out, "io.stats_out");
  json_mirror_path(p.cfg.io.stats_out);
  const auto& sev = p.cfg.experiment.severities;
  if (sev.size() < 2) throw ConfigError("experiment.severities needs at least 2 entries");
  for (const auto& s : sev) s.validate(p.gmm->shape);
  InversionConfig inv = p.cfg.inversion;
  inv.rng_seed = p.cfg.seed;
  inv.validate(p.schedule);

  return guarded_run([&] {
    const ExperimentReport report = deviation_experiment(*p.gmm, p.schedule, sev, p.cfg.experiment.n_samples, inv);
    write_report(report, p.cfg.io.stats_out);
    if (!opts.quiet) {
      for (const auto& s : sev) {
        const std::string l = s.label();
        log << l << "  mean KL ddim " << detail::format_number(report.mean_kl(l + "/ddim")) << "  da "
            << detail::format_number(report.mean_kl(l + "/da")) << '\n';
      }
    }
  });
}

inline int sweep_cmd(const CommandOptions& opts, std::ostream& log) {
  Prepared p = prepare_common(opts);
  require_gmm(p, "sweep");
  require_writable_parent(p.cfg.io.stats_out, "io.stats_out");
  json_mirror_path(p.cfg.io.stats_out);
  const Shape shape = p.gmm->shape;
  p.cfg.op.validate(shape);
  const OperatorPtr op = build_operator(p.cfg.op, shape);

  std::vector<Tensor> ys;
  if (!p.cfg.io.input.empty()) {
    require_existing(p.cfg.io.input, "io.input");
    try {
      ys.push_back(op->measurement_from_image(load_tensor(p.cfg.io.input)));
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("io.input ") + p.cfg.io.input.string() + ": " + e.what());
    }
  }
  SweepConfig sc;
  sc.steps_inv = p.cfg.inversion.steps;
  sc.steps_gen = p.cfg.steps_gen;
  sc.ddim_eta = p.cfg.ddim_eta;
  sc.seed = p.cfg.seed;
  if (p.cfg.experiment.eta_grid.empty() || p.cfg.experiment.t0_grid.empty()) {
    throw ConfigError("experiment.eta_grid and experiment.t0_grid must be non-empty");
  }
  for (const int t0 : p.cfg.experiment.t0_grid) {
    if (sc.steps_inv < 2 || sc.steps_inv > t0 + 1 || sc.steps_gen < 2 || sc.steps_gen > t0 + 1) {
      throw ConfigError("inversion/generation steps do not fit t0 = " + std::to_string(t0));
    }
  }

  return guarded_run([&] {
    if (ys.empty()) {
      for (std::size_t i = 0; i < p.cfg.experiment.n_measurements; ++i) {
        Rng rng(derive_seed(derive_seed(p.cfg.seed, 1000), i));
        const Tensor x0 = p.gmm->sample(rng);
        ys.push_back(degrade(*op, p.cfg.op, x0, rng).y);
      }
    }
    const ExperimentReport report = tradeoff_sweep(*p.gmm, p.schedule, *op, ys, p.cfg.experiment.eta_grid,
                                                   p.cfg.experiment.t0_grid, sc);
    write_report(report, p.cfg.io.stats_out);
    if (!opts.quiet) {
      for (const auto& r : report.rows) {
        log << r.condition << "  L2 " << detail::format_number(*r.l2) << "  NLL " << detail::format_number(*r.nll)
            << '\n';
      }
    }
  });
}

inline int make_toy_cmd(const CommandOptions& opts, std::ostream& log) {
  Prepared p = prepare_common(opts);
  const ToyConfig& t = p.cfg.toy;
  require_path(t.output_dir, "toy.output_dir");
  if (std::filesystem::exists(t.output_dir) && !std::filesystem::is_directory(t.output_dir)) {
    throw ConfigError("toy.output_dir is not a directory: " + t.output_dir.string());
  }
  GaussianMixtureModel gmm = t.mixture ? make_toy_mixture(*t.mixture)
                                       : (require_existing(p.cfg.denoiser.gmm_path, "denoiser.gmm_path"),
                                          GaussianMixtureModel::load(p.cfg.denoiser.gmm_path));
  bool images = true;
  try {
    check_image_shape(gmm.shape);
  } catch (const ShapeError&) {
    images = false;
  }

  return guarded_run([&] {
    std::filesystem::create_directories(t.output_dir);
    gmm.save(t.output_dir / "gmm.json");
    Shape stacked{t.n_samples};
    stacked.insert(stacked.end(), gmm.shape.begin(), gmm.shape.end());
    Tensor all(stacked);
    Rng rng(p.cfg.seed);
    const std::size_t d = gmm.dim();
    for (std::size_t j = 0; j < t.n_samples; ++j) {
      const Tensor x = gmm.sample(rng);
      std::copy(x.values().begin(), x.values().end(), all.values().begin() + static_cast<std::ptrdiff_t>(j * d));
      if (images) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%04zu.png", j);
        save_png(x, t.output_dir / name);
      }
    }
    save_raw(all, t.output_dir / "samples.ssdt");
    if (!opts.quiet) {
      log << "wrote " << t.n_samples << " samples of " << shape_string(gmm.shape) << " to "
          << t.output_dir.string() << '\n';
    }
  });
}

}  // namespace cli

/// Runs one command. Problems found before any output is written exit with
/// kExitConfig, failures afterwards with kExitRuntime.
inline int run_command(Command cmd, const CommandOptions& opts, std::ostream& log, std::ostream& err) {
  try {
    switch (cmd) {
      case Command::Restore: return cli::restore(opts, log);
      case Command::CompareInversions: return cli::compare_inversions_cmd(opts, log);
      case Command::Deviation: return cli::deviation_cmd(opts, log);
      case Command::Sweep: return cli::sweep_cmd(opts, log);
      case Command::MakeToy: return cli::make_toy_cmd(opts, log);
    }
    throw ConfigError("unknown command");
  } catch (const cli::RuntimeFailure& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace ssd

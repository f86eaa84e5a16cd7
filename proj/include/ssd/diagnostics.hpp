// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssd/denoiser.hpp"
#include "ssd/generation.hpp"
#include "ssd/inversion.hpp"
#include "ssd/operators.hpp"
#include "ssd/parallel.hpp"
#include "ssd/random.hpp"
#include "ssd/schedule.hpp"
#include "ssd/stats.hpp"

namespace ssd {

/// Gaussian-fit KL(N(mean, var) || N(0, 1)) of the samples.
inline double kl_to_standard_normal(std::span<const double> samples) {
  const Moments m = sample_moments(samples);
  return kl_from_moments(m.mean, m.variance);
}

inline double mse(const Tensor& x, const Tensor& ref) {
  require_same_shape(x, ref, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - ref[i]) * (x[i] - ref[i]);
  return acc / static_cast<double>(x.size());
}

inline double psnr_from_mse(double err, double peak, double cap = 99.0) {
  if (!(peak > 0.0)) throw ConfigError("psnr peak must be positive");
  if (err <= 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(peak * peak / err));
}

inline double psnr(const Tensor& x, const Tensor& ref, double peak, double cap = 99.0) {
  return psnr_from_mse(mse(x, ref), peak, cap);
}

/// Realism surrogate: negative log-likelihood under the mixture, per dimension.
inline double gmm_nll(const GaussianMixtureModel& gmm, const Tensor& x) {
  return -gmm.log_density(x) / static_cast<double>(gmm.dim());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ReportRow {
  std::string condition;
  int timestep = 0;
  double mean = 0.0;
  double variance = 0.0;
  double kl = 0.0;
  std::optional<double> psnr;
  std::optional<double> l2;
  std::optional<double> nll;
  std::optional<double> consistency;  // |H x - y|_inf
};

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<ReportRow> rows;

  std::string to_csv() const {
    std::ostringstream out;
    out << "condition,timestep,mean,variance,kl,psnr,l2,nll,consistency\r\n";
    auto opt = [](const std::optional<double>& v) { return v ? detail::format_number(*v) : std::string(); };
    for (const auto& r : rows) {
      out << detail::csv_field(r.condition) << ',' << r.timestep << ',' << detail::format_number(r.mean) << ','
          << detail::format_number(r.variance) << ',' << detail::format_number(r.kl) << ',' << opt(r.psnr) << ','
          << opt(r.l2) << ',' << opt(r.nll) << ',' << opt(r.consistency) << "\r\n";
    }
    return out.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["config_digest"] = config_digest;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json row{{"condition", r.condition}, {"timestep", r.timestep}, {"mean", r.mean},
                         {"variance", r.variance},   {"kl", r.kl}};
      row["psnr"] = r.psnr ? nlohmann::json(*r.psnr) : nlohmann::json(nullptr);
      row["l2"] = r.l2 ? nlohmann::json(*r.l2) : nlohmann::json(nullptr);
      row["nll"] = r.nll ? nlohmann::json(*r.nll) : nlohmann::json(nullptr);
      row["consistency"] = r.consistency ? nlohmann::json(*r.consistency) : nlohmann::json(nullptr);
      j["rows"].push_back(std::move(row));
    }
    return j;
  }

  std::vector<const ReportRow*> rows_for(const std::string& condition) const {
    std::vector<const ReportRow*> out;
    for (const auto& r : rows) {
      if (r.condition == condition) out.push_back(&r);
    }
    return out;
  }

  double mean_kl(const std::string& condition) const {
    const auto picked = rows_for(condition);
    if (picked.empty()) throw ConfigError("no report rows for condition '" + condition + "'");
    double s = 0.0;
    for (const auto* r : picked) s += r->kl;
    return s / static_cast<double>(picked.size());
  }
};

// ---------------------------------------------------------------------------
// Deviation experiment
// ---------------------------------------------------------------------------

struct DeviationCell {
  NoiseStats ddim;
  NoiseStats da;
};

/// DDIM and DA inversion of one degraded sample, both started from H^+ y.
inline DeviationCell deviation_cell(const NoiseSchedule& schedule, const Denoiser& denoiser, const LinearOperator& op,
                                    const DegradationSpec& spec, const Tensor& x0, const InversionConfig& cfg,
                                    std::uint64_t seed) {
  Rng noise_rng(derive_seed(seed, 11));
  const Measurement m = degrade(op, spec, x0, noise_rng);
  const Tensor start = op.pinv_apply(m.y);
  InversionConfig da_cfg = cfg;
  da_cfg.rng_seed = derive_seed(seed, 12);
  return {invert_from(schedule, denoiser, start, cfg, InversionMethod::Ddim).stats,
          invert_from(schedule, denoiser, start, da_cfg, InversionMethod::Da).stats};
}

/// For each severity and sample: draw x0 from the mixture, degrade, invert with
/// DDIM and DA, and record the predicted-noise moments per grid step. Rows hold
/// per-step averages over samples, condition "<severity>/ddim" or "<severity>/da",
/// in severity order. Sample j uses the same x0 under every severity.
inline ExperimentReport deviation_experiment(const GaussianMixtureModel& gmm, const NoiseSchedule& schedule,
                                             const std::vector<DegradationSpec>& severities, std::size_t n_samples,
                                             const InversionConfig& cfg) {
  if (severities.size() < 2) throw ConfigError("deviation experiment needs at least 2 severities");
  if (n_samples < 1) throw ConfigError("deviation experiment needs at least 1 sample");
  cfg.validate(schedule);
  const GmmDenoiser denoiser(gmm, schedule);

  std::vector<OperatorPtr> ops;
  for (const auto& spec : severities) ops.push_back(build_operator(spec, gmm.shape));

  const std::size_t n_sev = severities.size();
  std::vector<DeviationCell> cells(n_sev * n_samples);
  parallel_for(cells.size(), [&](std::size_t idx) {
    const std::size_t sev = idx / n_samples;
    const std::size_t j = idx % n_samples;
    const std::uint64_t sample_seed = derive_seed(cfg.rng_seed, j);
    Rng draw(derive_seed(sample_seed, 10));
    const Tensor x0 = gmm.sample(draw);
    cells[idx] = deviation_cell(schedule, denoiser, *ops[sev], severities[sev], x0, cfg,
                                derive_seed(sample_seed, 100 + sev));
  });

  ExperimentReport report;
  report.seed = cfg.rng_seed;
  nlohmann::json digest{{"eta", cfg.eta}, {"t0", cfg.t0}, {"steps", cfg.steps}, {"n_samples", n_samples}};
  for (const auto& spec : severities) digest["severities"].push_back(spec.to_json());
  report.config_digest = fnv1a_hex(digest.dump());

  for (std::size_t sev = 0; sev < n_sev; ++sev) {
    for (const bool da : {false, true}) {
      const std::size_t n_steps = cells[sev * n_samples].ddim.steps.size();
      for (std::size_t s = 0; s < n_steps; ++s) {
        ReportRow row;
        row.condition = severities[sev].label() + (da ? "/da" : "/ddim");
        for (std::size_t j = 0; j < n_samples; ++j) {
          const DeviationCell& c = cells[sev * n_samples + j];
          const StepNoiseRecord& r = (da ? c.da : c.ddim).steps[s];
          row.timestep = r.t_to;
          row.mean += r.mean;
          row.variance += r.variance;
          row.kl += r.kl;
        }
        const auto n = static_cast<double>(n_samples);
        row.mean /= n;
        row.variance /= n;
        row.kl /= n;
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Inversion followed by plain generation
// ---------------------------------------------------------------------------

struct InvertGenerateConfig {
  InversionConfig inversion;
  int steps_gen = 85;
  double ddim_eta = 0.0;
  std::uint64_t gen_seed = 0;
};

struct InvertGenerateResult {
  Tensor output;
  NoiseStats stats;
};

/// Inversion of x_start to t0 with `method`, then DDIM generation back to 0 without projection.
inline InvertGenerateResult invert_generate(const NoiseSchedule& schedule, const Denoiser& denoiser,
                                            const Tensor& x_start, const InvertGenerateConfig& cfg,
                                            InversionMethod method) {
  InversionResult inv = invert_from(schedule, denoiser, x_start, cfg.inversion, method);
  Rng rng(cfg.gen_seed);
  const TimestepGrid grid = make_grid(schedule, cfg.steps_gen, cfg.inversion.t0);
  return {generate(schedule, denoiser, std::move(inv.state), grid, cfg.ddim_eta, rng), std::move(inv.stats)};
}

inline ReportRow noise_summary_row(std::string condition, int timestep, const NoiseStats& stats) {
  ReportRow row;
  row.condition = std::move(condition);
  row.timestep = timestep;
  for (const auto& r : stats.steps) {
    row.mean += r.mean;
    row.variance += r.variance;
    row.kl += r.kl;
  }
  const auto n = static_cast<double>(std::max<std::size_t>(stats.steps.size(), 1));
  row.mean /= n;
  row.variance /= n;
  row.kl /= n;
  return row;
}

/// One row per inversion method (ddim, ddpm, da) on the same input and seeds:
/// faithfulness = L2 to H^+ y, realism = mixture NLL when a mixture is given.
inline std::vector<ReportRow> compare_inversions(const NoiseSchedule& schedule, const Denoiser& denoiser,
                                                 const LinearOperator& op, const Tensor& y,
                                                 const InvertGenerateConfig& cfg,
                                                 const GaussianMixtureModel* gmm = nullptr) {
  const Tensor start = op.pinv_apply(y);
  std::vector<ReportRow> rows;
  for (const InversionMethod m : {InversionMethod::Ddim, InversionMethod::Ddpm, InversionMethod::Da}) {
    const InvertGenerateResult r = invert_generate(schedule, denoiser, start, cfg, m);
    ReportRow row = noise_summary_row(to_string(m), cfg.inversion.t0, r.stats);
    row.l2 = l2_distance(r.output, start);
    if (gmm != nullptr) row.nll = gmm_nll(*gmm, r.output);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// eta / t0 trade-off sweep
// ---------------------------------------------------------------------------

struct SweepConfig {
  int steps_inv = 15;
  int steps_gen = 85;
  double ddim_eta = 0.0;
  std::uint64_t seed = 0;
};

inline std::string sweep_label(double eta, int t0) {
  return "eta=" + detail::format_number(eta) + ",t0=" + std::to_string(t0);
}

/// DA inversion + plain generation for every (eta, t0) over all measurements.
/// Rows: one per (eta, t0), eta-major within each t0 row of the grid, holding
/// mean L2 to H^+ y, mean mixture NLL and the averaged DA noise moments.
/// Measurement i uses the same random streams at every grid point.
inline ExperimentReport tradeoff_sweep(const GaussianMixtureModel& gmm, const NoiseSchedule& schedule,
                                       const LinearOperator& op, const std::vector<Tensor>& y_set,
                                       const std::vector<double>& eta_grid, const std::vector<int>& t0_grid,
                                       const SweepConfig& cfg) {
  if (eta_grid.empty() || t0_grid.empty()) throw ConfigError("sweep grids must be non-empty");
  if (y_set.empty()) throw ConfigError("sweep needs at least one measurement");
  const GmmDenoiser denoiser(gmm, schedule);

  const std::size_t n_eta = eta_grid.size();
  const std::size_t n_y = y_set.size();
  const std::size_t n_cells = t0_grid.size() * n_eta * n_y;
  std::vector<InvertGenerateConfig> configs;
  for (const int t0 : t0_grid) {
    for (const double eta : eta_grid) {
      InvertGenerateConfig c;
      c.inversion.eta = eta;
      c.inversion.t0 = t0;
      c.inversion.steps = cfg.steps_inv;
      c.steps_gen = cfg.steps_gen;
      c.ddim_eta = cfg.ddim_eta;
      c.inversion.validate(schedule);
      if (c.steps_gen < 2 || c.steps_gen > t0 + 1) throw ConfigError("sweep generation steps do not fit t0");
      configs.push_back(c);
    }
  }

  struct Cell {
    double l2 = 0.0;
    double nll = 0.0;
    ReportRow noise;
  };
  std::vector<Cell> cells(n_cells);
  parallel_for(n_cells, [&](std::size_t idx) {
    const std::size_t i = idx % n_y;
    InvertGenerateConfig c = configs[idx / n_y];
    c.inversion.rng_seed = derive_seed(cfg.seed, 2 * i);
    c.gen_seed = derive_seed(cfg.seed, 2 * i + 1);
    const Tensor start = op.pinv_apply(y_set[i]);
    const InvertGenerateResult r = invert_generate(schedule, denoiser, start, c, InversionMethod::Da);
    cells[idx] = {l2_distance(r.output, start), gmm_nll(gmm, r.output), noise_summary_row("", 0, r.stats)};
  });

  ExperimentReport report;
  report.seed = cfg.seed;
  nlohmann::json digest{{"steps_inv", cfg.steps_inv}, {"steps_gen", cfg.steps_gen}, {"ddim_eta", cfg.ddim_eta},
                        {"eta_grid", eta_grid},       {"t0_grid", t0_grid},         {"n_measurements", n_y}};
  report.config_digest = fnv1a_hex(digest.dump());

  for (std::size_t g = 0; g < configs.size(); ++g) {
    ReportRow row;
    row.condition = sweep_label(configs[g].inversion.eta, configs[g].inversion.t0);
    row.timestep = configs[g].inversion.t0;
    double l2 = 0.0;
    double nll = 0.0;
    for (std::size_t i = 0; i < n_y; ++i) {
      const Cell& c = cells[g * n_y + i];
      l2 += c.l2;
      nll += c.nll;
      row.mean += c.noise.mean;
      row.variance += c.noise.variance;
      row.kl += c.noise.kl;
    }
    const auto n = static_cast<double>(n_y);
    row.mean /= n;
    row.variance /= n;
    row.kl /= n;
    row.l2 = l2 / n;
    row.nll = nll / n;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace ssd

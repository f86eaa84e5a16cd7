// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "support.hpp"

using namespace ssd;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun run_cli(const std::string& args) {
  const std::string cmd = std::string(SSD_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

/// A small 8x8 single-component toy written by make-toy into dir/toy.
std::filesystem::path make_small_toy(const std::filesystem::path& dir) {
  write_json(dir / "toy.json", {{"seed", 1},
                                {"toy",
                                 {{"mixture", {{"height", 8}, {"width", 8}, {"components", 1}, {"seed", 2}}},
                                  {"n_samples", 4},
                                  {"output_dir", "toy"}}}});
  const CliRun r = run_cli("make-toy --config " + (dir / "toy.json").string() + " --quiet");
  EXPECT_EQ(r.code, 0) << r.output;
  return dir / "toy" / "gmm.json";
}

}  // namespace

TEST(Cli, Usage) {
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("frobnicate --config x.json").code, 2);
  EXPECT_EQ(run_cli("restore").code, 2);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = testkit::temp_dir("cli_config");
  const auto gmm = make_small_toy(dir);

  CliRun r = run_cli("restore --config " + (dir / "nope.json").string());
  EXPECT_EQ(r.code, 2);

  write_json(dir / "missing_input.json", {{"denoiser", {{"gmm_path", gmm.string()}}},
                                          {"io", {{"input", "absent.png"}, {"output", "out.png"}}}});
  r = run_cli("restore --config " + (dir / "missing_input.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("absent.png"), std::string::npos) << r.output;

  write_json(dir / "bad_key.json", {{"inversion", {{"etaa", 0.4}}}});
  r = run_cli("restore --config " + (dir / "bad_key.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("etaa"), std::string::npos) << r.output;

  write_json(dir / "bad_scale.json", {{"operator", {{"type", "sr_bicubic"}, {"scale", 3}}},
                                      {"denoiser", {{"gmm_path", gmm.string()}}},
                                      {"io", {{"input", "toy/sample_0000.png"}, {"output", "out.png"}}}});
  EXPECT_EQ(run_cli("restore --config " + (dir / "bad_scale.json").string()).code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir / "out.png"));

  ::setenv("SSD_NUM_THREADS", "zero", 1);
  write_json(dir / "ok.json", {{"denoiser", {{"gmm_path", gmm.string()}}},
                               {"io", {{"input", "toy/sample_0000.png"}, {"output", "out.png"}}}});
  r = run_cli("restore --config " + (dir / "ok.json").string());
  ::unsetenv("SSD_NUM_THREADS");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("SSD_NUM_THREADS"), std::string::npos) << r.output;
}

TEST(Cli, DenoiserFailureExitsThree) {
  const auto dir = testkit::temp_dir("cli_runtime");
  save_png(Tensor({4, 4, 1}, 0.2), dir / "in.png");
  write_json(dir / "ext.json", {{"denoiser", {{"kind", "external"}, {"command", {SSD_FAKE_SERVER, "exit"}}}},
                                {"inversion", {{"t0", 50}, {"steps", 5}}},
                                {"generation", {{"steps", 5}}},
                                {"io", {{"input", "in.png"}, {"output", "out.png"}}}});
  const CliRun r = run_cli("restore --config " + (dir / "ext.json").string());
  EXPECT_EQ(r.code, 3) << r.output;

  write_json(dir / "echo.json", {{"denoiser", {{"kind", "external"}, {"command", {SSD_FAKE_SERVER, "echo"}}}},
                                 {"inversion", {{"t0", 50}, {"steps", 5}}},
                                 {"generation", {{"steps", 5}}},
                                 {"io", {{"input", "in.png"}, {"output", "out.png"}}}});
  const CliRun ok = run_cli("restore --config " + (dir / "echo.json").string());
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_LE(max_abs_diff(load_png(dir / "out.png"), load_png(dir / "in.png")), 1.0 / 255.0);
}

TEST(Cli, RestoreReproducibleReport) {
  const auto dir = testkit::temp_dir("cli_restore");
  const auto gmm = make_small_toy(dir);
  const nlohmann::json cfg{{"operator", {{"type", "sr_bicubic"}, {"scale", 2}, {"noise", {{"sigma_max", 0.05}}}}},
                           {"denoiser", {{"gmm_path", gmm.string()}}},
                           {"seed", 3},
                           {"inversion", {{"t0", 300}, {"steps", 8}}},
                           {"generation", {{"steps", 30}}},
                           {"io",
                            {{"input", "toy/sample_0001.png"},
                             {"clean_input", true},
                             {"reference", "toy/sample_0001.png"},
                             {"output", "restored.ssdt"},
                             {"stats_out", "stats.csv"}}}};
  write_json(dir / "restore.json", cfg);
  CliRun r = run_cli("restore --config " + (dir / "restore.json").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string first = read_text(dir / "stats.csv");
  const std::string first_img = read_text(dir / "restored.ssdt");
  EXPECT_EQ(first.substr(0, 10), "condition,");
  EXPECT_NE(first.find("\r\n"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "stats.json"));
  EXPECT_EQ(count_lines(first), 1u + 7u + 1u);

  r = run_cli("restore --config " + (dir / "restore.json").string() + " --quiet");
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(r.output.empty()) << r.output;
  EXPECT_EQ(read_text(dir / "stats.csv"), first);
  EXPECT_EQ(read_text(dir / "restored.ssdt"), first_img);

  r = run_cli("restore --config " + (dir / "restore.json").string() + " --seed 4 --quiet");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(read_text(dir / "restored.ssdt"), first_img);
}

TEST(Cli, SweepAndCompare) {
  const auto dir = testkit::temp_dir("cli_sweep");
  const auto gmm = make_small_toy(dir);
  write_json(dir / "sweep.json", {{"operator", {{"type", "sr_average"}, {"scale", 2}}},
                                  {"denoiser", {{"gmm_path", gmm.string()}}},
                                  {"inversion", {{"steps", 5}}},
                                  {"generation", {{"steps", 10}}},
                                  {"experiment", {{"eta_grid", {0.0, 0.5, 1.0}}, {"t0_grid", {100, 200, 300}},
                                                  {"n_measurements", 2}}},
                                  {"io", {{"stats_out", "sweep.csv"}}}});
  CliRun r = run_cli("sweep --config " + (dir / "sweep.json").string() + " --quiet");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(count_lines(read_text(dir / "sweep.csv")), 1u + 9u);

  write_json(dir / "compare.json", {{"operator", {{"type", "sr_average"}, {"scale", 2}}},
                                    {"denoiser", {{"gmm_path", gmm.string()}}},
                                    {"inversion", {{"t0", 200}, {"steps", 5}}},
                                    {"generation", {{"steps", 10}}},
                                    {"io", {{"input", "toy/sample_0002.png"}, {"clean_input", true},
                                            {"stats_out", "compare.csv"}}}});
  r = run_cli("compare-inversions --config " + (dir / "compare.json").string() + " --quiet");
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = read_text(dir / "compare.csv");
  EXPECT_EQ(count_lines(csv), 1u + 3u);
  for (const char* m : {"\nddim,", "\nddpm,", "\nda,"}) EXPECT_NE(csv.find(m), std::string::npos) << m;

  write_json(dir / "deviation.json", {{"denoiser", {{"gmm_path", gmm.string()}}},
                                      {"inversion", {{"t0", 200}, {"steps", 5}}},
                                      {"experiment", {{"severities", {{{"type", "identity"}},
                                                                      {{"type", "sr_bicubic"}, {"scale", 2}}}},
                                                      {"n_samples", 2}}},
                                      {"io", {{"stats_out", "deviation.csv"}}}});
  r = run_cli("deviation --config " + (dir / "deviation.json").string() + " --quiet");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(count_lines(read_text(dir / "deviation.csv")), 1u + 2u * 2u * 4u);
}

TEST(Cli, MakeToySamples) {
  const auto dir = testkit::temp_dir("cli_toy");
  const nlohmann::json cfg{{"seed", 5},
                           {"toy",
                            {{"mixture",
                              {{"height", 2}, {"width", 2}, {"components", 1}, {"low_amplitude", 0.0},
                               {"high_amplitude", 0.0}, {"variance", 1.0}}},
                             {"n_samples", 10000},
                             {"output_dir", "out"}}}};
  write_json(dir / "toy.json", cfg);
  CliRun r = run_cli("make-toy --config " + (dir / "toy.json").string() + " --quiet");
  ASSERT_EQ(r.code, 0) << r.output;

  const GaussianMixtureModel gmm = GaussianMixtureModel::load(dir / "out" / "gmm.json");
  EXPECT_EQ(gmm.shape, (Shape{2, 2, 1}));
  gmm.save(dir / "again.json");
  EXPECT_EQ(GaussianMixtureModel::load(dir / "again.json").to_json(), gmm.to_json());

  const Tensor samples = load_raw(dir / "out" / "samples.ssdt");
  ASSERT_EQ(samples.shape(), (Shape{10000, 2, 2, 1}));
  const Moments m = sample_moments(samples.values());
  const double n = static_cast<double>(samples.size());
  EXPECT_NEAR(m.mean, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(m.variance, 1.0, 4.0 * std::sqrt(2.0 / (n - 1)));
  const std::string first = read_text(dir / "out" / "samples.ssdt");

  r = run_cli("make-toy --config " + (dir / "toy.json").string() + " --quiet");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(read_text(dir / "out" / "samples.ssdt"), first);
  r = run_cli("make-toy --config " + (dir / "toy.json").string() + " --seed 6 --quiet");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(read_text(dir / "out" / "samples.ssdt"), first);
}

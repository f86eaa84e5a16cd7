// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "ssd/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Shortcut sampling for diffusion-based image restoration"};
  app.require_subcommand(1);

  ssd::CommandOptions opts;
  std::uint64_t seed = 0;
  const std::vector<std::pair<ssd::Command, std::pair<const char*, const char*>>> commands{
      {ssd::Command::Restore, {"restore", "Restore a degraded measurement"}},
      {ssd::Command::CompareInversions, {"compare-inversions", "Compare DDIM, DDPM and DA inversion on one input"}},
      {ssd::Command::Deviation, {"deviation", "Predicted-noise deviation across degradation severities"}},
      {ssd::Command::Sweep, {"sweep", "Faithfulness / realism sweep over eta and t0"}},
      {ssd::Command::MakeToy, {"make-toy", "Sample toy images and write the mixture spec"}},
  };
  std::vector<std::pair<CLI::App*, ssd::Command>> subs;
  for (const auto& [cmd, text] : commands) {
    CLI::App* sub = app.add_subcommand(text.first, text.second);
    sub->add_option("--config", opts.config, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "Seed, overrides the config file");
    sub->add_flag("--quiet", opts.quiet, "Only print errors");
    subs.emplace_back(sub, cmd);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return ssd::kExitConfig;
  }

  for (const auto& [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed") > 0) opts.seed = seed;
    return ssd::run_command(cmd, opts, std::cout, std::cerr);
  }
  return ssd::kExitConfig;
}

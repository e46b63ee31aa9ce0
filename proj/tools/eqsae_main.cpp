#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "eqsae/runner.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string scale = "desk";
  std::string output;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int stage_parallelism = 0;
  bool sae_first = false;
};

eqsae::run::RunConfig resolve_config(const CliOptions& opt) {
  eqsae::run::RunConfig config;
  if (!opt.config_path.empty()) {
    config = eqsae::run::load_config(opt.config_path);
  } else if (opt.scale == "paper") {
    config = eqsae::run::paper_config(1, "runs/paper");
  } else if (opt.scale == "desk") {
    config = eqsae::run::desk_config(1, "runs/desk");
  } else {
    throw std::runtime_error("--scale must be desk or paper");
  }
  if (opt.seed_set) config.seed = opt.seed;
  if (!opt.output.empty()) config.output_dir = opt.output;
  if (opt.stage_parallelism > 0) config.stage_parallelism = opt.stage_parallelism;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Adaptively equivariant sparse autoencoder pipeline: synthetic rotation "
      "dataset, base autoencoders, activation-transform fitting, TopK SAEs and "
      "the 180-task probing suite."};
  app.require_subcommand(1);

  CliOptions opt;
  app.add_option("--config", opt.config_path, "JSON config file (strict schema)");
  app.add_option("--scale", opt.scale, "Preset when no config is given: desk|paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", opt.seed, "Override the global seed")
      ->each([&opt](const std::string&) { opt.seed_set = true; });
  app.add_option("--output", opt.output, "Override the output directory");
  app.add_option("--stage-parallelism", opt.stage_parallelism,
                 "Worker-thread bound; results do not depend on it");

  auto* gen = app.add_subcommand("gen-data", "Generate the canonical image pools");
  auto* train_base = app.add_subcommand("train-base", "Train the base autoencoders");
  auto* fit_m = app.add_subcommand("fit-m", "Fit the activation transform matrix");
  auto* train_sae = app.add_subcommand("train-sae", "Train the SAE grid");
  auto* probe = app.add_subcommand("probe", "Run the 180-task probing suite");
  auto* rep = app.add_subcommand("report", "Emit CSV tables and SVG figures");
  auto* all = app.add_subcommand("all", "Run the full pipeline");
  all->add_flag("--sae-first", opt.sae_first,
                "Train the SAEs before fitting M (the two stages are independent)");
  for (auto* sub : {gen, train_base, fit_m, train_sae, probe, rep, all}) {
    sub->fallthrough();  // global options may follow the subcommand
  }

  CLI11_PARSE(app, argc, argv);

  std::string stage = "config";
  try {
    auto config = resolve_config(opt);
    if (gen->parsed()) {
      stage = "gen-data";
      eqsae::run::cmd_gen_data(config);
    } else if (train_base->parsed()) {
      stage = "train-base";
      eqsae::run::cmd_train_base(config);
    } else if (fit_m->parsed()) {
      stage = "fit-m";
      eqsae::run::cmd_fit_m(config);
    } else if (train_sae->parsed()) {
      stage = "train-sae";
      eqsae::run::cmd_train_sae(config);
    } else if (probe->parsed()) {
      stage = "probe";
      eqsae::run::cmd_probe(config);
    } else if (rep->parsed()) {
      stage = "report";
      eqsae::run::cmd_report(config);
    } else if (all->parsed()) {
      stage = "all";
      eqsae::run::cmd_all(config, !opt.sae_first);
    }
  } catch (const std::exception& e) {
    std::cerr << stage << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace eqsae::run {

struct SaeJob {
  std::string variant;
  int k = 16;
};

// Full pipeline configuration. `desk` and `paper` presets pin the sample
// counts and epoch budgets; the desk grid is the reduced CI grid documented
// in the README.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string scale = "desk";
  std::vector<std::string> base_kinds{"mlp", "cnn"};
  std::string sae_base = "cnn";
  std::vector<SaeJob> sae_grid;
  std::vector<int> trunc_lengths{32};
  int probe_k = 16;
  std::vector<std::string> probe_variants{"regular", "wide", "two_layer", "invariant"};
  std::string output_dir = "runs/desk";
  int n_train = 2000;
  int n_probe = 1024;
  int n_eval = 256;
  int base_epochs = 24;
  int sae_epochs = 100;
  int m_epochs = 150;
  int stage_parallelism = 0;  // 0 = hardware concurrency
};

RunConfig desk_config(std::uint64_t seed, const std::string& output_dir);
RunConfig paper_config(std::uint64_t seed, const std::string& output_dir);

// Strict JSON: unknown keys are rejected, scale-pinned fields may not be
// overridden.
RunConfig load_config(const std::string& path);

// Stage entry points. Each one checks the run manifest, skips when its
// inputs are unchanged and its artifacts exist, and records what it wrote.
void cmd_gen_data(const RunConfig& config);
void cmd_train_base(const RunConfig& config);
void cmd_fit_m(const RunConfig& config);
void cmd_train_sae(const RunConfig& config);
void cmd_probe(const RunConfig& config);
void cmd_report(const RunConfig& config);
void cmd_all(const RunConfig& config, bool fit_m_first = true);

// Artifact locations under config.output_dir.
struct Paths {
  std::string train_prefix, probe_prefix, eval_prefix;
  std::string base_dir(const std::string& kind) const;
  std::string m_path(const std::string& kind) const;
  std::string m_report_path(const std::string& kind) const;
  std::string sae_dir(const std::string& variant, int k) const;
  std::string sae_history_path(const std::string& variant, int k) const;
  std::string probe_csv;
  std::string report_dir;
  std::string root;
};
Paths artifact_paths(const RunConfig& config);

}  // namespace eqsae::run

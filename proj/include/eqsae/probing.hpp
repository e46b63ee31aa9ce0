#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eqsae/dataset.hpp"
#include "eqsae/equivariance.hpp"
#include "eqsae/sae.hpp"

namespace eqsae::probe {

// Dense feature matrix with a label-stratified train/test split. Splits are
// disjoint and exhaustive; probes only ever see test labels for scoring.
struct ProbeDataset {
  std::vector<float> features;  // [n, f] row-major
  std::size_t n = 0;
  std::size_t f = 0;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint32_t> train_idx;
  std::vector<std::uint32_t> test_idx;
};

// 75/25 stratified split, deterministic in the seed.
void stratified_split(const std::vector<std::uint8_t>& labels, double train_frac,
                      std::uint64_t seed, std::vector<std::uint32_t>& train_idx,
                      std::vector<std::uint32_t>& test_idx);

struct TruncationSelection {
  std::vector<std::uint32_t> selected;  // descending score, index-ascending ties
  std::vector<double> scores;           // aligned with `selected`
};

// Largest |mean(latent | positive) - mean(latent | negative)| over the
// training rows only; callers must never pass test rows here.
TruncationSelection select_top_latents(const float* latents, std::size_t n_train,
                                       std::size_t n_latents,
                                       const std::vector<std::uint8_t>& labels, int L);

// 2 P R / (P + R); 0 when precision + recall is 0.
double f1_score(const std::vector<std::uint8_t>& predictions,
                const std::vector<std::uint8_t>& labels);

// 16-nearest-neighbor vote (Euclidean); 8/8 ties go positive.
double knn_probe(const ProbeDataset& data);

// Single affine score + sigmoid, cross-entropy with L2 1e-4, minibatch
// gradient descent: batch 64, 200 epochs, lr 1e-3, seeded shuffling.
double logreg_probe(const ProbeDataset& data, std::uint64_t seed);

struct LogRegConfig {
  int epochs = 200;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double l2 = 1e-4;
};
double logreg_probe(const ProbeDataset& data, std::uint64_t seed, const LogRegConfig& cfg);

// Gradient-boosted trees on the logistic loss: exact greedy splits over all
// features (midpoint thresholds), second-order leaf weights -G/(H+lambda),
// shrinkage 0.3, 100 rounds of depth <= 6, no subsampling.
struct GbtConfig {
  int rounds = 100;
  int max_depth = 6;
  double learning_rate = 0.3;
  double lambda = 1.0;
};
double gbt_probe(const ProbeDataset& data);
double gbt_probe(const ProbeDataset& data, const GbtConfig& cfg);

// One probe-suite representation: base activations, SAE latents, or SAE
// reconstructions from truncation-masked latents (with the equivariant
// back-transform when `transform` is set).
struct Representation {
  enum class Kind { activations, latents, reconstruction };
  std::string name;
  std::string sae_variant;  // "" for activations
  int k = 0;                // TopK of the producing SAE, 0 for activations
  Kind kind = Kind::activations;
  const std::vector<float>* full = nullptr;  // [n, f_full]
  std::size_t f_full = 0;
  const sae::SaeModel* sae_model = nullptr;            // reconstruction only
  const equi::TransformMatrix* transform = nullptr;    // equivariant recon only
  const std::vector<int>* inferred_powers = nullptr;   // per sample, with transform
};

struct ProbeResult {
  std::string task;
  data::TaskFamily family;
  int shape = 0;
  int position = -1;
  int orientation = -1;
  std::string representation;
  std::string sae_variant;
  int k = 0;
  int trunc_len = 0;
  std::string probe;
  double f1 = 0.0;
  bool best = false;
};

struct SuiteConfig {
  int trunc_len = 32;
  double train_frac = 0.75;
  std::uint64_t seed = 0;
};

struct SuiteResult {
  std::vector<ProbeResult> rows;
  // representation name -> per-family mean best-probe F1 (S, SP, SO, SPO)
  std::map<std::string, std::array<double, 4>> family_mean_best;
  // representation name -> mean best-probe F1 over all tasks
  std::map<std::string, double> overall_mean_best;
};

// Runs every task x representation x probe. Tasks are independent and run
// in parallel with per-task seeds; one failing task is recorded and skipped
// without aborting the suite.
SuiteResult run_task_suite(const std::vector<Representation>& representations,
                           const std::vector<data::LabeledImage>& images,
                           const std::vector<data::TaskSpec>& tasks,
                           const SuiteConfig& config);

}  // namespace eqsae::probe

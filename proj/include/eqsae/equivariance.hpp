#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "eqsae/sae.hpp"
#include "eqsae/tensor.hpp"

namespace eqsae::equi {

// The d x d map M with M^p psi(x) ~= psi(g^p x); identity before fitting.
struct TransformMatrix {
  num::Tensor<float> m;  // [256, 256]
};

TransformMatrix identity_transform(std::size_t dim = 256);

struct FitReport {
  std::array<double, 4> r2_per_power{};           // p = 1..4 (p=4 pairs with psi(x))
  double r2_mean = 0.0;
  double r2_std = 0.0;
  std::array<double, 4> identity_r2_per_power{};  // same metric with M = I
  double identity_baseline_r2 = 0.0;
  int epochs = 0;
  std::vector<double> loss_history;
};

struct FitMConfig {
  int epochs = 150;
  int batch_size = 64;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 0;
};

// Fits M by Adam from identity on orbit-grouped activations [4n, 256]
// (row 4i+p is orbit i at power p). The loss pairs M^p psi(x) with
// psi(g^p x) for p = 1..3 and M^4 psi(x) with psi(x). R^2 is evaluated
// per power on eval_activations, which must be orbit-grouped as well.
TransformMatrix fit_m(const num::Tensor<float>& train_activations,
                      const num::Tensor<float>& eval_activations, const FitMConfig& config,
                      FitReport* report);

// 1 - ||pred - truth||_F^2 / ||truth - column_mean(truth)||_F^2, double
// accumulation. Errors on zero total variance.
double r_squared(const num::Tensor<float>& predicted, const num::Tensor<float>& truth);
double r_squared(const std::vector<double>& predicted, const std::vector<double>& truth,
                 std::size_t n, std::size_t d);

// Applies M to each row p times.
num::Tensor<float> predict_transformed(const TransformMatrix& m,
                                       const num::Tensor<float>& canonical, int p);

struct EquivariantReconstruction {
  std::vector<float> reconstructions;  // [n, 256]
  std::vector<int> inferred_powers;    // argmin_p ||a - M^p c||, ties to smallest p
};

// Reconstructs each activation as the canonical SAE output c, then returns
// M^{p*} c with p* chosen by residual against the input activation.
EquivariantReconstruction equivariant_reconstruct(const sae::SaeModel& sae,
                                                  const TransformMatrix& m,
                                                  const num::Tensor<float>& activations);

enum class FeatureLabel { invariant, equivariant, dead };

struct FeatureClassification {
  std::vector<FeatureLabel> labels;     // per latent
  std::vector<double> similarities;     // cos(D_i, M D_i); 0 for dead columns
  int invariant_count = 0;
  int equivariant_count = 0;
  int dead_count = 0;
};

// A dictionary column is invariant when M moves it nowhere: cosine
// similarity between D_i and M D_i above the threshold.
FeatureClassification classify_dictionary_features(const sae::SaeModel& sae,
                                                   const TransformMatrix& m,
                                                   double threshold = 0.9);

void save_transform(const std::string& path, const TransformMatrix& m);
TransformMatrix load_transform(const std::string& path);

}  // namespace eqsae::equi

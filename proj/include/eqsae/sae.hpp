#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eqsae/base_models.hpp"
#include "eqsae/tensor.hpp"

namespace eqsae::equi {
struct TransformMatrix;
}

namespace eqsae::sae {

enum class Variant { regular, wide, two_layer, invariant };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// TopK sparse autoencoder over 256-dim activations. regular/wide use a
// one-layer encoder; two_layer/invariant add a ReLU hidden layer of 512.
// The decoder is always one affine map whose columns form the dictionary.
struct SaeModel {
  Variant variant = Variant::regular;
  int k = 16;
  int n_latents = 2048;
  int hidden = 0;  // 512 for two-layer encoders, else 0

  std::vector<std::string> param_names;
  std::vector<num::Tensor<float>> params;

  num::Tensor<float>& w_enc();  // final encoder affine
  num::Tensor<float>& b_enc();
  num::Tensor<float>& w_dec();  // [256, n_latents]
  num::Tensor<float>& b_dec();
  const num::Tensor<float>& w_dec() const;
  const num::Tensor<float>& b_dec() const;
};

SaeModel build_sae(Variant variant, int k, std::uint64_t seed);

// z = TopK(encoder(x)); exactly k nonzeros per row up to genuinely zero
// kept values.
num::Tensor<float> encode(const SaeModel& sae, const num::Tensor<float>& activations);
num::Tensor<float> decode(const SaeModel& sae, const num::Tensor<float>& z);

enum class TrainMode { reconstruction, invariance };

struct SaeTrainConfig {
  int epochs = 500;
  int n_samples = 10000;
  int batch_size = 64;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
};

// Trains on the frozen base model's middle activations of `images`.
// reconstruction mode fits x~ -> x~ over all images; invariance mode needs
// orbit-grouped images (4i+p layout from Augment::all_rotations) and fits
// every rotated activation to its canonical (p=0) activation.
TrainHistory train_sae(SaeModel& sae, const base::BaseAutoencoder& base_model,
                       const std::vector<data::LabeledImage>& images, TrainMode mode,
                       const SaeTrainConfig& config);

// Same, over precomputed activations [n, 256]; n must be orbit-grouped for
// invariance mode.
TrainHistory train_sae_on_activations(SaeModel& sae, const num::Tensor<float>& activations,
                                      TrainMode mode, const SaeTrainConfig& config);

// Mean over samples of the L1 norm of the latent vector.
double latent_l1(const SaeModel& sae, const num::Tensor<float>& activations);

// Base reconstruction error when the middle activation is replaced by the
// SAE's reconstruction; with a TransformMatrix the invariant SAE's canonical
// reconstruction is first mapped back by the inferred group power.
double splice_loss(const base::BaseAutoencoder& base_model, const SaeModel& sae,
                   const std::vector<data::LabeledImage>& images,
                   const equi::TransformMatrix* transform = nullptr);

// Latents that never survive TopK on the given activations.
int count_dead_latents(const SaeModel& sae, const num::Tensor<float>& activations);

void save_sae(const std::string& dir, const SaeModel& sae);
SaeModel load_sae(const std::string& dir);

}  // namespace eqsae::sae

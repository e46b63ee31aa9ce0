#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eqsae/dataset.hpp"
#include "eqsae/tensor.hpp"

namespace eqsae::base {

enum class Kind { mlp, cnn };

const char* kind_name(Kind kind);
Kind kind_from_name(const std::string& name);

struct LayerDesc {
  std::string name;
  num::Dims dims;
};

struct BaseTrainConfig {
  int epochs = 100;
  int n_samples = 10000;
  int batch_size = 64;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 0;
};

// The two reconstruction autoencoders. Both expose a 256-dimensional
// pre-activation middle layer; the MLP works on flattened 4096-pixel
// vectors, the CNN on 1x64x64 images.
struct BaseAutoencoder {
  Kind kind = Kind::mlp;
  std::uint64_t seed = 0;
  std::vector<std::string> param_names;
  std::vector<num::Tensor<float>> params;

  // Pre-activation middle layer, [batch, 256].
  num::Tensor<float> middle_pre(const num::Tensor<float>& images) const;
  // Decoder path from a [batch, 256] middle activation back to images,
  // including the encoder-side ReLU that follows the middle layer.
  num::Tensor<float> decode_middle(const num::Tensor<float>& middle) const;
  // Full reconstruction, [batch, 1, 64, 64].
  num::Tensor<float> forward(const num::Tensor<float>& images) const;

  std::size_t param_count() const;
};

// Layer shape tuples, in architecture order; unit tests pin these against a
// hard-coded manifest.
std::vector<LayerDesc> architecture_manifest(Kind kind);

BaseAutoencoder build_base(Kind kind, std::uint64_t seed);

struct TrainHistory {
  std::vector<double> epoch_loss;
};

// Pixel-MSE training with Adam; deterministic given the config seed.
// Aborts with a diagnostic if the loss goes non-finite.
TrainHistory train_base(BaseAutoencoder& model,
                        const std::vector<data::LabeledImage>& images,
                        const BaseTrainConfig& config);

// Stacks images into a [n, 1, 64, 64] batch tensor.
num::Tensor<float> batch_images(std::span<const data::LabeledImage> images);

// psi(x): [n, 256] middle activations, computed in inference batches.
num::Tensor<float> middle_activations(const BaseAutoencoder& model,
                                      std::span<const data::LabeledImage> images);

void save_base(const std::string& dir, const BaseAutoencoder& model);
BaseAutoencoder load_base(const std::string& dir);

}  // namespace eqsae::base

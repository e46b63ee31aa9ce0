#include "eqsae/sae.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "eqsae/equivariance.hpp"
#include "eqsae/optim.hpp"
#include "eqsae/rng.hpp"
#include "eqsae/tensor_io.hpp"

namespace eqsae::sae {

using num::Dims;
using num::Tensor;

namespace {
constexpr std::size_t kDim = 256;
constexpr int kHidden = 512;
}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::regular: return "regular";
    case Variant::wide: return "wide";
    case Variant::two_layer: return "two_layer";
    case Variant::invariant: return "invariant";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "regular") return Variant::regular;
  if (name == "wide") return Variant::wide;
  if (name == "two_layer") return Variant::two_layer;
  if (name == "invariant") return Variant::invariant;
  throw num::ParamError("unknown SAE variant: " + name);
}

num::Tensor<float>& SaeModel::w_enc() { return params[hidden ? 2 : 0]; }
num::Tensor<float>& SaeModel::b_enc() { return params[hidden ? 3 : 1]; }
num::Tensor<float>& SaeModel::w_dec() { return params[hidden ? 4 : 2]; }
num::Tensor<float>& SaeModel::b_dec() { return params[hidden ? 5 : 3]; }
const num::Tensor<float>& SaeModel::w_dec() const { return params[hidden ? 4 : 2]; }
const num::Tensor<float>& SaeModel::b_dec() const { return params[hidden ? 5 : 3]; }

SaeModel build_sae(Variant variant, int k, std::uint64_t seed) {
  SaeModel sae;
  sae.variant = variant;
  sae.k = k;
  sae.n_latents = variant == Variant::wide ? 8192 : 2048;
  sae.hidden = (variant == Variant::two_layer || variant == Variant::invariant) ? kHidden : 0;
  if (k < 1 || k > sae.n_latents) throw num::ParamError("invalid TopK k");

  Rng rng(derive_seed(seed, "sae_init", variant_name(variant), static_cast<std::uint64_t>(k)));
  auto uniform = [&rng](Dims dims, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<float> v(num::element_count(dims));
    for (auto& x : v) x = static_cast<float>(rng.next_uniform(-bound, bound));
    return Tensor<float>::param(dims, std::move(v));
  };

  const auto nl = static_cast<std::size_t>(sae.n_latents);
  if (sae.hidden) {
    sae.param_names = {"enc_hidden.w", "enc_hidden.b", "enc.w", "enc.b", "dec.w", "dec.b"};
    sae.params.push_back(uniform({kHidden, kDim}, kDim));
    sae.params.push_back(uniform({kHidden}, kDim));
    sae.params.push_back(uniform({nl, kHidden}, kHidden));
    sae.params.push_back(uniform({nl}, kHidden));
  } else {
    sae.param_names = {"enc.w", "enc.b", "dec.w", "dec.b"};
    sae.params.push_back(uniform({nl, kDim}, kDim));
    sae.params.push_back(uniform({nl}, kDim));
  }
  sae.params.push_back(uniform({kDim, nl}, nl));
  sae.params.push_back(uniform({kDim}, nl));
  return sae;
}

num::Tensor<float> encode(const SaeModel& sae, const Tensor<float>& activations) {
  if (activations.dims().size() != 2 || activations.dim(1) != kDim) {
    throw num::ShapeError("encode expects [batch, 256], got " +
                          num::dims_to_string(activations.dims()));
  }
  const auto& params = sae.params;
  if (sae.hidden) {
    auto h = num::relu(num::apply_linear(activations, params[0], params[1]));
    return num::topk(num::apply_linear(h, params[2], params[3]), sae.k);
  }
  return num::topk(num::apply_linear(activations, params[0], params[1]), sae.k);
}

num::Tensor<float> decode(const SaeModel& sae, const Tensor<float>& z) {
  if (z.dims().size() != 2 || z.dim(1) != static_cast<std::size_t>(sae.n_latents)) {
    throw num::ShapeError("decode expects [batch, n_latents], got " +
                          num::dims_to_string(z.dims()));
  }
  return num::apply_linear(z, sae.w_dec(), sae.b_dec());
}

namespace {

void check_orbit_grouped(const std::vector<data::LabeledImage>& images) {
  if (images.empty() || images.size() % 4 != 0) {
    throw num::ParamError("invariance mode requires orbit-grouped data (4 rotations per orbit)");
  }
  for (std::size_t i = 0; i < images.size(); i += 4) {
    for (int p = 0; p < 4; ++p) {
      if (images[i + p].spec.power != p ||
          !(data::rotate_spec(images[i].spec, p).quadrants == images[i + p].spec.quadrants)) {
        throw num::ParamError("invariance mode requires orbit-grouped data (orbit " +
                              std::to_string(i / 4) + " is not a full orbit)");
      }
    }
  }
}

std::vector<float> gather_rows(std::span<const float> src, std::size_t row_len,
                               std::span<const std::uint32_t> rows) {
  std::vector<float> out(rows.size() * row_len);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.data() + static_cast<std::size_t>(rows[i]) * row_len, row_len,
                out.data() + i * row_len);
  }
  return out;
}

}  // namespace

TrainHistory train_sae_on_activations(SaeModel& sae, const Tensor<float>& activations,
                                      TrainMode mode, const SaeTrainConfig& config) {
  const std::size_t n = activations.dim(0);
  if (mode == TrainMode::invariance && n % 4 != 0) {
    throw num::ParamError("invariance mode requires orbit-grouped activations");
  }
  auto acts = activations.values();

  auto state = num::init_adam(std::span<const Tensor<float>>(sae.params),
                              config.learning_rate);
  TrainHistory history;
  history.epoch_loss.reserve(config.epochs);

  const std::size_t units = mode == TrainMode::invariance ? n / 4 : n;
  std::vector<std::uint32_t> order(units);
  for (std::size_t i = 0; i < units; ++i) order[i] = static_cast<std::uint32_t>(i);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(derive_seed(config.seed, "sae_epoch", variant_name(sae.variant),
                             static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order.data(), order.size());

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < units; start += config.batch_size) {
      const std::size_t end = std::min(units, start + config.batch_size);
      Tensor<float> x, target;
      if (mode == TrainMode::reconstruction) {
        auto rows = gather_rows(acts, kDim, {order.data() + start, end - start});
        x = Tensor<float>::from_data({end - start, kDim}, std::move(rows));
        target = x;
      } else {
        // One minibatch element is a whole orbit: all four transformed
        // activations, each reconstructing the canonical one.
        std::vector<float> xin((end - start) * 4 * kDim);
        std::vector<float> tgt((end - start) * 4 * kDim);
        for (std::size_t i = start; i < end; ++i) {
          const std::size_t orbit = order[i];
          for (int p = 0; p < 4; ++p) {
            std::copy_n(acts.data() + (4 * orbit + p) * kDim, kDim,
                        xin.data() + ((i - start) * 4 + p) * kDim);
            std::copy_n(acts.data() + (4 * orbit) * kDim, kDim,
                        tgt.data() + ((i - start) * 4 + p) * kDim);
          }
        }
        x = Tensor<float>::from_data({(end - start) * 4, kDim}, std::move(xin));
        target = Tensor<float>::from_data({(end - start) * 4, kDim}, std::move(tgt));
      }

      auto loss = num::mse(decode(sae, encode(sae, x)), target);
      if (!loss.all_finite()) {
        throw std::runtime_error("train_sae: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch offset " +
                                 std::to_string(start));
      }
      num::backward(loss);
      num::adam_step(std::span<Tensor<float>>(sae.params), state);
      epoch_loss += static_cast<double>(loss.scalar()) * static_cast<double>(x.dim(0));
      seen += x.dim(0);
    }
    history.epoch_loss.push_back(epoch_loss / static_cast<double>(seen));
  }
  return history;
}

TrainHistory train_sae(SaeModel& sae, const base::BaseAutoencoder& base_model,
                       const std::vector<data::LabeledImage>& images, TrainMode mode,
                       const SaeTrainConfig& config) {
  if (mode == TrainMode::invariance) check_orbit_grouped(images);
  auto acts = base::middle_activations(base_model, images);
  return train_sae_on_activations(sae, acts, mode, config);
}

double latent_l1(const SaeModel& sae, const Tensor<float>& activations) {
  const std::size_t n = activations.dim(0);
  double total = 0.0;
  constexpr std::size_t kChunk = 512;
  auto acts = activations.values();
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    auto x = Tensor<float>::from_data(
        {end - start, kDim},
        std::vector<float>(acts.begin() + start * kDim, acts.begin() + end * kDim));
    auto z = encode(sae, x);
    for (float v : z.values()) total += std::abs(static_cast<double>(v));
  }
  return total / static_cast<double>(n);
}

double splice_loss(const base::BaseAutoencoder& base_model, const SaeModel& sae,
                   const std::vector<data::LabeledImage>& images,
                   const equi::TransformMatrix* transform) {
  if (images.empty()) throw num::ParamError("splice_loss: empty image set");
  double total_sq = 0.0;
  std::size_t total_px = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t end = std::min(images.size(), start + kChunk);
    auto x = base::batch_images(std::span<const data::LabeledImage>(images)
                                    .subspan(start, end - start));
    auto mid = base_model.middle_pre(x);
    Tensor<float> replacement;
    if (transform) {
      auto er = equi::equivariant_reconstruct(sae, *transform, mid);
      replacement = Tensor<float>::from_data(mid.dims(), std::move(er.reconstructions));
    } else {
      replacement = decode(sae, encode(sae, mid));
    }
    auto recon = base_model.decode_middle(replacement);
    auto rv = recon.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < rv.size(); ++i) {
      const double d = static_cast<double>(rv[i]) - static_cast<double>(xv[i]);
      total_sq += d * d;
    }
    total_px += rv.size();
  }
  return total_sq / static_cast<double>(total_px);
}

int count_dead_latents(const SaeModel& sae, const Tensor<float>& activations) {
  std::vector<char> fired(sae.n_latents, 0);
  const std::size_t n = activations.dim(0);
  auto acts = activations.values();
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    auto x = Tensor<float>::from_data(
        {end - start, kDim},
        std::vector<float>(acts.begin() + start * kDim, acts.begin() + end * kDim));
    auto z = encode(sae, x);
    auto zv = z.values();
    for (std::size_t i = 0; i < end - start; ++i) {
      for (std::size_t j = 0; j < static_cast<std::size_t>(sae.n_latents); ++j) {
        if (zv[i * sae.n_latents + j] != 0.0f) fired[j] = 1;
      }
    }
  }
  int dead = 0;
  for (char f : fired) dead += f == 0;
  return dead;
}

void save_sae(const std::string& dir, const SaeModel& sae) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["version"] = 1;
  j["variant"] = variant_name(sae.variant);
  j["k"] = sae.k;
  j["n_latents"] = sae.n_latents;
  j["hidden"] = sae.hidden;
  auto& layers = j["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < sae.params.size(); ++i) {
    layers.push_back({{"name", sae.param_names[i]}, {"dims", sae.params[i].dims()}});
    num::write_tensor(dir + "/" + sae.param_names[i] + ".etns", sae.params[i]);
  }
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw num::IoError("cannot write " + dir + "/manifest.json");
  out << j.dump(1) << "\n";
}

SaeModel load_sae(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw num::IoError("cannot read " + dir + "/manifest.json");
  nlohmann::json j = nlohmann::json::parse(in);
  SaeModel sae;
  sae.variant = variant_from_name(j.at("variant").get<std::string>());
  sae.k = j.at("k").get<int>();
  sae.n_latents = j.at("n_latents").get<int>();
  sae.hidden = j.at("hidden").get<int>();
  for (const auto& layer : j.at("params")) {
    const std::string name = layer.at("name").get<std::string>();
    auto t = num::read_tensor<float>(dir + "/" + name + ".etns");
    sae.param_names.push_back(name);
    sae.params.push_back(Tensor<float>::param(
        t.dims(), std::vector<float>(t.values().begin(), t.values().end())));
  }
  return sae;
}

}  // namespace eqsae::sae

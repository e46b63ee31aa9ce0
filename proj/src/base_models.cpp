#include "eqsae/base_models.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "eqsae/optim.hpp"
#include "eqsae/rng.hpp"
#include "eqsae/tensor_io.hpp"

namespace eqsae::base {

using num::Dims;
using num::Tensor;

const char* kind_name(Kind kind) { return kind == Kind::mlp ? "mlp" : "cnn"; }

Kind kind_from_name(const std::string& name) {
  if (name == "mlp") return Kind::mlp;
  if (name == "cnn") return Kind::cnn;
  throw num::ParamError("unknown base model kind: " + name);
}

namespace {

constexpr int kMiddleDim = 256;
constexpr int kPixels = 64 * 64;

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), the usual fan-in scaling.
std::vector<float> init_uniform(Rng& rng, std::size_t n, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.next_uniform(-bound, bound));
  return v;
}

struct LayerInit {
  std::string name;
  Dims dims;
  std::size_t fan_in;
};

std::vector<LayerInit> layer_plan(Kind kind) {
  if (kind == Kind::mlp) {
    return {
        {"enc1.w", {256, 4096}, 4096}, {"enc1.b", {256}, 4096},
        {"enc2.w", {256, 256}, 256},   {"enc2.b", {256}, 256},
        {"dec1.w", {256, 256}, 256},   {"dec1.b", {256}, 256},
        {"dec2.w", {4096, 256}, 256},  {"dec2.b", {4096}, 256},
    };
  }
  return {
      {"enc1.k", {16, 1, 3, 3}, 1 * 3 * 3},
      {"enc2.k", {32, 16, 3, 3}, 16 * 3 * 3},
      {"enc3.k", {256, 32, 16, 16}, 32ul * 16 * 16},
      {"dec1.k", {256, 32, 16, 16}, 256ul * 16 * 16},
      {"dec2.k", {32, 16, 3, 3}, 32 * 3 * 3},
      {"dec3.k", {16, 1, 3, 3}, 16 * 3 * 3},
  };
}

}  // namespace

std::vector<LayerDesc> architecture_manifest(Kind kind) {
  std::vector<LayerDesc> out;
  for (const auto& l : layer_plan(kind)) out.push_back({l.name, l.dims});
  return out;
}

BaseAutoencoder build_base(Kind kind, std::uint64_t seed) {
  BaseAutoencoder model;
  model.kind = kind;
  model.seed = seed;
  Rng rng(derive_seed(seed, "base_init", kind_name(kind)));
  for (const auto& l : layer_plan(kind)) {
    model.param_names.push_back(l.name);
    model.params.push_back(
        Tensor<float>::param(l.dims, init_uniform(rng, num::element_count(l.dims), l.fan_in)));
  }
  return model;
}

std::size_t BaseAutoencoder::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

num::Tensor<float> BaseAutoencoder::middle_pre(const Tensor<float>& images) const {
  const std::size_t b = images.dim(0);
  if (kind == Kind::mlp) {
    auto x = num::reshape(images, {b, static_cast<std::size_t>(kPixels)});
    auto h = num::relu(num::apply_linear(x, params[0], params[1]));
    return num::apply_linear(h, params[2], params[3]);
  }
  auto h1 = num::relu(num::apply_conv2d(images, params[0], 2, 1));
  auto h2 = num::relu(num::apply_conv2d(h1, params[1], 2, 1));
  auto mid = num::apply_conv2d(h2, params[2], 1, 0);  // [b, 256, 1, 1]
  return num::reshape(mid, {b, static_cast<std::size_t>(kMiddleDim)});
}

num::Tensor<float> BaseAutoencoder::decode_middle(const Tensor<float>& middle) const {
  const std::size_t b = middle.dim(0);
  auto h = num::relu(middle);
  if (kind == Kind::mlp) {
    auto d1 = num::relu(num::apply_linear(h, params[4], params[5]));
    auto flat = num::apply_linear(d1, params[6], params[7]);
    return num::reshape(flat, {b, 1, 64, 64});
  }
  auto z = num::reshape(h, {b, static_cast<std::size_t>(kMiddleDim), 1, 1});
  auto d1 = num::relu(num::apply_conv_transpose2d(z, params[3], 1, 0, 0));
  auto d2 = num::relu(num::apply_conv_transpose2d(d1, params[4], 2, 1, 1));
  return num::apply_conv_transpose2d(d2, params[5], 2, 1, 1);
}

num::Tensor<float> BaseAutoencoder::forward(const Tensor<float>& images) const {
  return decode_middle(middle_pre(images));
}

num::Tensor<float> batch_images(std::span<const data::LabeledImage> images) {
  const std::size_t n = images.size();
  std::vector<float> buf(n * kPixels);
  for (std::size_t i = 0; i < n; ++i) {
    auto v = images[i].pixels.values();
    std::copy(v.begin(), v.end(), buf.begin() + i * kPixels);
  }
  return Tensor<float>::from_data({n, 1, 64, 64}, std::move(buf));
}

TrainHistory train_base(BaseAutoencoder& model,
                        const std::vector<data::LabeledImage>& images,
                        const BaseTrainConfig& config) {
  if (images.empty()) throw num::ParamError("train_base: empty dataset");
  const std::size_t n = images.size();
  auto state = num::init_adam(std::span<const Tensor<float>>(model.params),
                              config.learning_rate);
  TrainHistory history;
  history.epoch_loss.reserve(config.epochs);

  std::vector<std::uint32_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);

  std::vector<const data::LabeledImage*> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(derive_seed(config.seed, "base_epoch", kind_name(model.kind),
                             static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order.data(), order.size());

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::vector<float> buf((end - start) * kPixels);
      for (std::size_t i = start; i < end; ++i) {
        auto v = images[order[i]].pixels.values();
        std::copy(v.begin(), v.end(), buf.begin() + (i - start) * kPixels);
      }
      auto x = Tensor<float>::from_data({end - start, 1, 64, 64}, std::move(buf));
      auto loss = num::mse(model.forward(x), x);
      if (!loss.all_finite()) {
        throw std::runtime_error("train_base: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch offset " +
                                 std::to_string(start));
      }
      num::backward(loss);
      num::adam_step(std::span<Tensor<float>>(model.params), state);
      epoch_loss += static_cast<double>(loss.scalar()) * static_cast<double>(end - start);
    }
    history.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return history;
}

num::Tensor<float> middle_activations(const BaseAutoencoder& model,
                                      std::span<const data::LabeledImage> images) {
  const std::size_t n = images.size();
  std::vector<float> acts(n * kMiddleDim);
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    auto x = batch_images(images.subspan(start, end - start));
    auto mid = model.middle_pre(x);
    auto v = mid.values();
    std::copy(v.begin(), v.end(), acts.begin() + start * kMiddleDim);
  }
  return Tensor<float>::from_data({n, static_cast<std::size_t>(kMiddleDim)},
                                  std::move(acts));
}

void save_base(const std::string& dir, const BaseAutoencoder& model) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = kind_name(model.kind);
  j["seed"] = model.seed;
  auto& layers = j["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    layers.push_back({{"name", model.param_names[i]},
                      {"dims", model.params[i].dims()}});
    num::write_tensor(dir + "/" + model.param_names[i] + ".etns", model.params[i]);
  }
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw num::IoError("cannot write " + dir + "/manifest.json");
  out << j.dump(1) << "\n";
}

BaseAutoencoder load_base(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw num::IoError("cannot read " + dir + "/manifest.json");
  nlohmann::json j = nlohmann::json::parse(in);
  BaseAutoencoder model;
  model.kind = kind_from_name(j.at("kind").get<std::string>());
  model.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& layer : j.at("params")) {
    const std::string name = layer.at("name").get<std::string>();
    auto t = num::read_tensor<float>(dir + "/" + name + ".etns");
    model.param_names.push_back(name);
    // Reload as parameters so training could resume from a checkpoint.
    model.params.push_back(Tensor<float>::param(
        t.dims(), std::vector<float>(t.values().begin(), t.values().end())));
  }
  return model;
}

}  // namespace eqsae::base

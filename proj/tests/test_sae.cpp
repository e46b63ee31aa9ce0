#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "eqsae/base_models.hpp"
#include "eqsae/optim.hpp"
#include "eqsae/rng.hpp"
#include "eqsae/sae.hpp"

using namespace eqsae;
using num::Dims;
using num::Tensor;
using sae::SaeModel;
using sae::Variant;

namespace {

Tensor<float> random_activations(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n * 256);
  for (auto& x : v) x = static_cast<float>(rng.next_uniform(-1.5, 1.5));
  return Tensor<float>::from_data({n, 256}, std::move(v));
}

int row_nonzeros(std::span<const float> z, std::size_t row, std::size_t n) {
  int count = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (z[row * n + j] != 0.0f) ++count;
  }
  return count;
}

}  // namespace

TEST_CASE("variant geometry: latent counts and encoder depth") {
  auto regular = sae::build_sae(Variant::regular, 16, 1);
  CHECK(regular.n_latents == 2048);
  CHECK(regular.hidden == 0);
  CHECK(regular.params.size() == 4);

  auto wide = sae::build_sae(Variant::wide, 16, 1);
  CHECK(wide.n_latents == 8192);
  CHECK(wide.hidden == 0);

  auto two = sae::build_sae(Variant::two_layer, 16, 1);
  CHECK(two.n_latents == 2048);
  CHECK(two.hidden == 512);
  CHECK(two.params.size() == 6);

  auto inv = sae::build_sae(Variant::invariant, 16, 1);
  CHECK(inv.n_latents == 2048);
  CHECK(inv.hidden == 512);
}

TEST_CASE("encode keeps exactly K nonzeros per row") {
  auto acts = random_activations(16, 3);
  for (Variant v : {Variant::regular, Variant::wide, Variant::two_layer, Variant::invariant}) {
    for (int k : {8, 16, 32}) {
      auto model = sae::build_sae(v, k, 7);
      auto z = sae::encode(model, acts);
      REQUIRE(z.dims() == Dims{16, static_cast<std::size_t>(model.n_latents)});
      for (std::size_t r = 0; r < 16; ++r) {
        CHECK(row_nonzeros(z.values(), r, model.n_latents) == k);
      }
    }
  }
}

TEST_CASE("zero input with zero biases encodes to zero latents") {
  auto model = sae::build_sae(Variant::regular, 8, 5);
  std::fill(model.b_enc().values_mut().begin(), model.b_enc().values_mut().end(), 0.0f);
  auto z = sae::encode(model, Tensor<float>::zeros({2, 256}));
  for (float v : z.values()) CHECK(v == 0.0f);
}

TEST_CASE("decode: zero latents give the bias, unit latents give dictionary columns") {
  auto model = sae::build_sae(Variant::regular, 8, 9);
  const std::size_t nl = model.n_latents;
  auto z0 = Tensor<float>::zeros({1, nl});
  auto out = sae::decode(model, z0);
  auto bd = model.b_dec().values();
  for (std::size_t j = 0; j < 256; ++j) CHECK(out.values()[j] == bd[j]);

  std::vector<float> unit(nl, 0.0f);
  unit[37] = 1.0f;
  auto e = sae::decode(model, Tensor<float>::from_data({1, nl}, std::move(unit)));
  auto wd = model.w_dec().values();
  for (std::size_t j = 0; j < 256; ++j) {
    CHECK(e.values()[j] == doctest::Approx(wd[j * nl + 37] + bd[j]).epsilon(1e-6));
  }

  auto round = sae::decode(model, sae::encode(model, random_activations(3, 4)));
  CHECK(round.dims() == Dims{3, 256});
}

TEST_CASE("latent_l1: zero latents -> 0; a single kept latent of 2 -> 2") {
  auto model = sae::build_sae(Variant::regular, 1, 11);
  auto& we = model.w_enc();
  std::fill(we.values_mut().begin(), we.values_mut().end(), 0.0f);
  std::fill(model.b_enc().values_mut().begin(), model.b_enc().values_mut().end(), 0.0f);
  CHECK(sae::latent_l1(model, Tensor<float>::zeros({4, 256})) == 0.0);

  we.values_mut()[5 * 256 + 0] = 1.0f;  // latent 5 reads coordinate 0
  std::vector<float> act(256, 0.0f);
  act[0] = 2.0f;
  auto acts = Tensor<float>::from_data({1, 256}, std::move(act));
  CHECK(sae::latent_l1(model, acts) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("invariance and reconstruction objectives match finite differences in double mode") {
  // The training losses rebuilt from the same ops at double precision. A
  // tiny SAE keeps the finite-difference sweep fast.
  Rng rng(21);
  const std::size_t dim = 6, nl = 12;
  const int k = 3;
  auto rand_vec = [&rng](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_uniform(-1, 1);
    return v;
  };
  auto we = Tensor<double>::param({nl, dim}, rand_vec(nl * dim));
  // Spread-out encoder biases keep the TopK selection margins wide, so the
  // finite-difference probe never straddles a selection change.
  std::vector<double> be_vals(nl);
  for (std::size_t i = 0; i < nl; ++i) be_vals[i] = 3.0 * static_cast<double>(i);
  auto be = Tensor<double>::param({nl}, std::move(be_vals));
  auto wd = Tensor<double>::param({dim, nl}, rand_vec(dim * nl));
  auto bd = Tensor<double>::param({dim}, rand_vec(dim));
  std::vector<Tensor<double>> params{we, be, wd, bd};

  auto x = Tensor<double>::from_data({4, dim}, rand_vec(4 * dim));        // transformed
  auto target = Tensor<double>::from_data({4, dim}, rand_vec(4 * dim));   // canonical

  auto build = [&](const Tensor<double>& inputs, const Tensor<double>& tgt) {
    return [&params, &inputs, &tgt, k] {
      auto z = num::topk(num::apply_linear(inputs, params[0], params[1]), k);
      return num::mse(num::apply_linear(z, params[2], params[3]), tgt);
    };
  };

  auto rec = num::grad_check(build(x, x), params, 1e-5, 1e-6);
  INFO("reconstruction ", rec.worst_location, " rel=", rec.max_rel_error);
  CHECK(rec.pass);

  auto inv = num::grad_check(build(x, target), params, 1e-5, 1e-6);
  INFO("invariance ", inv.worst_location, " rel=", inv.max_rel_error);
  CHECK(inv.pass);
}

TEST_CASE("train_sae freezes the base model and requires orbit grouping") {
  auto images = data::generate_dataset(12, 31, data::Augment::all_rotations);
  auto model = base::build_base(base::Kind::mlp, 41);
  std::vector<std::vector<float>> before;
  for (const auto& p : model.params) before.emplace_back(p.values().begin(), p.values().end());

  sae::SaeTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 3;
  auto s = sae::build_sae(Variant::invariant, 8, 13);
  auto history = sae::train_sae(s, model, images, sae::TrainMode::invariance, cfg);
  CHECK(history.epoch_loss.size() == 2);
  for (double l : history.epoch_loss) CHECK(std::isfinite(l));

  for (std::size_t p = 0; p < model.params.size(); ++p) {
    auto now = model.params[p].values();
    CHECK(std::equal(now.begin(), now.end(), before[p].begin()));
  }

  // Shuffled (non-orbit) data must be rejected in invariance mode.
  auto broken = images;
  std::swap(broken[0], broken[1]);
  auto s2 = sae::build_sae(Variant::invariant, 8, 13);
  CHECK_THROWS_AS(sae::train_sae(s2, model, broken, sae::TrainMode::invariance, cfg),
                  num::ParamError);
  // Reconstruction mode has no such requirement.
  auto s3 = sae::build_sae(Variant::regular, 8, 13);
  auto h3 = sae::train_sae(s3, model, broken, sae::TrainMode::reconstruction, cfg);
  CHECK(h3.epoch_loss.size() == 2);
}

TEST_CASE("short training decreases loss deterministically") {
  auto acts = random_activations(256, 17);
  sae::SaeTrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 32;
  cfg.seed = 23;
  auto run = [&] {
    auto model = sae::build_sae(Variant::regular, 8, 19);
    return sae::train_sae_on_activations(model, acts, sae::TrainMode::reconstruction, cfg);
  };
  auto h1 = run();
  auto h2 = run();
  CHECK(h1.epoch_loss == h2.epoch_loss);
  CHECK(h1.epoch_loss.back() < h1.epoch_loss.front());
}

TEST_CASE("identity passthrough SAE splices with no perturbation") {
  // w_enc stacked [I; -I], k=256, w_dec [I | -I]: reconstruction equals the
  // input exactly, so splice loss equals the base model's own loss.
  auto model = sae::build_sae(Variant::regular, 256, 29);
  auto we = model.w_enc().values_mut();
  std::fill(we.begin(), we.end(), 0.0f);
  auto wd = model.w_dec().values_mut();
  std::fill(wd.begin(), wd.end(), 0.0f);
  std::fill(model.b_enc().values_mut().begin(), model.b_enc().values_mut().end(), 0.0f);
  std::fill(model.b_dec().values_mut().begin(), model.b_dec().values_mut().end(), 0.0f);
  const std::size_t nl = model.n_latents;
  for (std::size_t j = 0; j < 256; ++j) {
    we[j * 256 + j] = 1.0f;
    we[(256 + j) * 256 + j] = -1.0f;
    wd[j * nl + j] = 1.0f;
    wd[j * nl + (256 + j)] = -1.0f;
  }

  auto images = data::generate_dataset(8, 37, data::Augment::none);
  auto base_model = base::build_base(base::Kind::cnn, 43);

  // Reference: the base model's own reconstruction error, same accumulation.
  auto x = base::batch_images(images);
  auto recon = base_model.forward(x);
  double ref_sq = 0.0;
  auto rv = recon.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < rv.size(); ++i) {
    const double d = double(rv[i]) - double(xv[i]);
    ref_sq += d * d;
  }
  const double ref = ref_sq / double(rv.size());

  const double spliced = sae::splice_loss(base_model, model, images, nullptr);
  CHECK(spliced == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("dead latent counting") {
  auto model = sae::build_sae(Variant::regular, 4, 47);
  auto acts = random_activations(64, 53);
  const int dead = sae::count_dead_latents(model, acts);
  CHECK(dead >= 0);
  CHECK(dead < model.n_latents);  // something fires on random inputs
}

TEST_CASE("sae checkpoint round trip") {
  auto model = sae::build_sae(Variant::two_layer, 16, 59);
  const std::string dir = "sae_ckpt_test";
  sae::save_sae(dir, model);
  auto back = sae::load_sae(dir);
  CHECK(back.variant == model.variant);
  CHECK(back.k == model.k);
  CHECK(back.n_latents == model.n_latents);
  CHECK(back.hidden == model.hidden);
  REQUIRE(back.params.size() == model.params.size());
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    auto a = model.params[p].values();
    auto b = back.params[p].values();
    REQUIRE(a.size() == b.size());
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  std::filesystem::remove_all(dir);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>

#include "eqsae/base_models.hpp"
#include "eqsae/dataset.hpp"

using namespace eqsae;
using base::BaseAutoencoder;
using base::Kind;
using num::Dims;
using num::Tensor;

TEST_CASE("architecture conformance against the hard-coded manifest") {
  const std::vector<std::pair<std::string, Dims>> mlp_expected = {
      {"enc1.w", {256, 4096}}, {"enc1.b", {256}}, {"enc2.w", {256, 256}},
      {"enc2.b", {256}},       {"dec1.w", {256, 256}}, {"dec1.b", {256}},
      {"dec2.w", {4096, 256}}, {"dec2.b", {4096}},
  };
  const std::vector<std::pair<std::string, Dims>> cnn_expected = {
      {"enc1.k", {16, 1, 3, 3}},     {"enc2.k", {32, 16, 3, 3}},
      {"enc3.k", {256, 32, 16, 16}}, {"dec1.k", {256, 32, 16, 16}},
      {"dec2.k", {32, 16, 3, 3}},    {"dec3.k", {16, 1, 3, 3}},
  };
  for (auto [kind, expected] :
       {std::pair{Kind::mlp, mlp_expected}, std::pair{Kind::cnn, cnn_expected}}) {
    auto manifest = base::architecture_manifest(kind);
    REQUIRE(manifest.size() == expected.size());
    auto model = base::build_base(kind, 1);
    REQUIRE(model.params.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(manifest[i].name == expected[i].first);
      CHECK(manifest[i].dims == expected[i].second);
      CHECK(model.params[i].dims() == expected[i].second);
    }
  }
}

TEST_CASE("mlp parameter count matches the layer-shape arithmetic") {
  auto model = base::build_base(Kind::mlp, 7);
  const std::size_t expected = 4096 * 256 + 256 + 256 * 256 + 256 + 256 * 256 + 256 +
                               256 * 4096 + 4096;
  CHECK(model.param_count() == expected);
  CHECK(expected == 2233088);
}

TEST_CASE("both kinds map images to a 256-dim middle and back to image shape") {
  auto imgs = data::generate_dataset(3, 11, data::Augment::none);
  auto x = base::batch_images(imgs);
  for (Kind kind : {Kind::mlp, Kind::cnn}) {
    auto model = base::build_base(kind, 3);
    auto mid = model.middle_pre(x);
    REQUIRE(mid.dims() == Dims{3, 256});
    CHECK(mid.all_finite());
    auto recon = model.forward(x);
    REQUIRE(recon.dims() == Dims{3, 1, 64, 64});
    CHECK(recon.all_finite());
  }
}

TEST_CASE("cnn forward of a zero image is finite") {
  auto model = base::build_base(Kind::cnn, 5);
  auto zero = Tensor<float>::zeros({1, 1, 64, 64});
  auto out = model.forward(zero);
  REQUIRE(out.dims() == Dims{1, 1, 64, 64});
  CHECK(out.all_finite());
}

TEST_CASE("splice identity: decode_middle(middle_pre(x)) == forward(x) bitwise") {
  auto imgs = data::generate_dataset(2, 13, data::Augment::none);
  auto x = base::batch_images(imgs);
  for (Kind kind : {Kind::mlp, Kind::cnn}) {
    auto model = base::build_base(kind, 17);
    auto direct = model.forward(x);
    auto spliced = model.decode_middle(model.middle_pre(x));
    auto dv = direct.values();
    auto sv = spliced.values();
    REQUIRE(dv.size() == sv.size());
    CHECK(std::equal(dv.begin(), dv.end(), sv.begin()));
  }
}

TEST_CASE("identical inputs give identical activations; rotations change them") {
  auto imgs = data::generate_dataset(4, 19, data::Augment::all_rotations);
  auto model = base::build_base(Kind::cnn, 23);
  auto acts = base::middle_activations(model, imgs);

  std::vector<data::LabeledImage> twice = {imgs[0], imgs[0]};
  auto twin = base::middle_activations(model, twice);
  for (std::size_t j = 0; j < 256; ++j) {
    CHECK(twin.values()[j] == twin.values()[256 + j]);
  }

  // A rotated image should produce a different activation vector.
  double dist = 0;
  for (std::size_t j = 0; j < 256; ++j) {
    const double d = double(acts.values()[j]) - double(acts.values()[256 + j]);
    dist += d * d;
  }
  CHECK(dist > 0.0);
}

TEST_CASE("short training runs reduce the loss and are seed-deterministic") {
  auto imgs = data::generate_dataset(48, 101, data::Augment::random_rotation);
  base::BaseTrainConfig cfg;
  cfg.epochs = 4;
  cfg.n_samples = static_cast<int>(imgs.size());
  cfg.batch_size = 16;
  cfg.seed = 5;

  for (Kind kind : {Kind::mlp, Kind::cnn}) {
    auto model = base::build_base(kind, 29);
    auto history = base::train_base(model, imgs, cfg);
    REQUIRE(history.epoch_loss.size() == 4);
    for (double l : history.epoch_loss) CHECK(std::isfinite(l));
    CHECK(history.epoch_loss.back() < history.epoch_loss.front());

    auto model2 = base::build_base(kind, 29);
    auto history2 = base::train_base(model2, imgs, cfg);
    CHECK(history.epoch_loss == history2.epoch_loss);
    for (std::size_t p = 0; p < model.params.size(); ++p) {
      auto a = model.params[p].values();
      auto b = model2.params[p].values();
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
}

TEST_CASE("checkpoint round trip preserves parameters bitwise") {
  auto model = base::build_base(Kind::cnn, 31);
  const std::string dir = "base_ckpt_test";
  base::save_base(dir, model);
  auto back = base::load_base(dir);
  CHECK(back.kind == model.kind);
  CHECK(back.seed == model.seed);
  REQUIRE(back.params.size() == model.params.size());
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    auto a = model.params[p].values();
    auto b = back.params[p].values();
    REQUIRE(a.size() == b.size());
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  std::filesystem::remove_all(dir);
}

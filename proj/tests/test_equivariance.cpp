#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "eqsae/equivariance.hpp"
#include "eqsae/rng.hpp"
#include "eqsae/sae.hpp"

using namespace eqsae;
using equi::TransformMatrix;
using num::Dims;
using num::Tensor;

namespace {

// Independent two-pass R^2 oracle.
double oracle_r2(const std::vector<double>& pred, const std::vector<double>& truth,
                 std::size_t n, std::size_t d) {
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n * d; ++i) {
    ss_res += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  }
  double ss_tot = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += truth[i * d + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      ss_tot += (truth[i * d + j] - mean) * (truth[i * d + j] - mean);
    }
  }
  return 1.0 - ss_res / ss_tot;
}

// double matrix-vector helper for oracles
std::vector<double> matvec(const std::vector<double>& m, const std::vector<double>& x,
                           std::size_t d) {
  std::vector<double> y(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) y[i] += m[i * d + j] * x[j];
  return y;
}

}  // namespace

TEST_CASE("r_squared: trivial values and oracle match") {
  Rng rng(3);
  const std::size_t n = 7, d = 5;
  std::vector<double> truth(n * d), pred(n * d);
  for (auto& v : truth) v = rng.next_uniform(-2, 2);
  for (std::size_t i = 0; i < n * d; ++i) pred[i] = truth[i];
  CHECK(equi::r_squared(pred, truth, n, d) == doctest::Approx(1.0).epsilon(1e-15));

  // Predicting the per-dimension mean gives exactly 0.
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += truth[i * d + j];
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) pred[i * d + j] = mean;
  }
  CHECK(equi::r_squared(pred, truth, n, d) == doctest::Approx(0.0).epsilon(1e-12));

  for (auto& v : pred) v = rng.next_uniform(-2, 2);
  const double got = equi::r_squared(pred, truth, n, d);
  const double want = oracle_r2(pred, truth, n, d);
  CHECK(std::abs(got - want) < 1e-10);

  std::vector<double> flat(n * d, 1.0);
  CHECK_THROWS_AS(equi::r_squared(pred, flat, n, d), num::ParamError);
}

TEST_CASE("r_squared is invariant under identical row permutations") {
  Rng rng(5);
  const std::size_t n = 9, d = 4;
  std::vector<double> truth(n * d), pred(n * d);
  for (auto& v : truth) v = rng.next_uniform(-1, 1);
  for (auto& v : pred) v = rng.next_uniform(-1, 1);
  const double base_value = equi::r_squared(pred, truth, n, d);

  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
  rng.shuffle(perm.data(), n);
  std::vector<double> truth_p(n * d), pred_p(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(truth.begin() + perm[i] * d, d, truth_p.begin() + i * d);
    std::copy_n(pred.begin() + perm[i] * d, d, pred_p.begin() + i * d);
  }
  CHECK(equi::r_squared(pred_p, truth_p, n, d) ==
        doctest::Approx(base_value).epsilon(1e-12));
}

TEST_CASE("predict_transformed: identity cases, matrix-square oracle, semigroup law") {
  Rng rng(7);
  std::vector<float> mv(256 * 256);
  for (auto& v : mv) v = static_cast<float>(rng.next_uniform(-0.05, 0.05));
  for (std::size_t i = 0; i < 256; ++i) mv[i * 256 + i] += 1.0f;
  TransformMatrix m{Tensor<float>::from_data({256, 256}, std::vector<float>(mv))};

  std::vector<float> xv(3 * 256);
  for (auto& v : xv) v = static_cast<float>(rng.next_uniform(-1, 1));
  auto x = Tensor<float>::from_data({3, 256}, std::vector<float>(xv));

  auto p0 = equi::predict_transformed(m, x, 0);
  CHECK(std::equal(p0.values().begin(), p0.values().end(), x.values().begin()));

  auto eye = equi::identity_transform();
  for (int p = 0; p < 4; ++p) {
    auto out = equi::predict_transformed(eye, x, p);
    CHECK(std::equal(out.values().begin(), out.values().end(), x.values().begin()));
  }

  // p=2 against an explicit double-precision matrix-square oracle.
  auto p2 = equi::predict_transformed(m, x, 2);
  std::vector<double> md(mv.begin(), mv.end());
  for (std::size_t row = 0; row < 3; ++row) {
    std::vector<double> xr(256);
    for (std::size_t j = 0; j < 256; ++j) xr[j] = xv[row * 256 + j];
    auto want = matvec(md, matvec(md, xr, 256), 256);
    for (std::size_t j = 0; j < 256; ++j) {
      CHECK(p2.values()[row * 256 + j] ==
            doctest::Approx(want[j]).epsilon(1e-4));
    }
  }

  // Semigroup: applying a then b quarter turns equals a+b in one go, exactly,
  // because both sides perform the identical sequence of applications.
  for (int a = 0; a <= 3; ++a) {
    for (int b = 0; a + b <= 3; ++b) {
      auto lhs = equi::predict_transformed(m, equi::predict_transformed(m, x, a), b);
      auto rhs = equi::predict_transformed(m, x, a + b);
      CHECK(std::equal(lhs.values().begin(), lhs.values().end(), rhs.values().begin()));
    }
  }

  CHECK_THROWS_AS(equi::predict_transformed(m, x, 4), num::ParamError);
}

TEST_CASE("fit_m: invariant data fits immediately, linear data fits well") {
  Rng rng(11);
  const std::size_t orbits = 192;

  // Exactly invariant activations: all four powers identical.
  {
    std::vector<float> rows(orbits * 4 * 256);
    for (std::size_t i = 0; i < orbits; ++i) {
      std::vector<float> v(256);
      for (auto& e : v) e = static_cast<float>(rng.next_uniform(-1, 1));
      for (int p = 0; p < 4; ++p) {
        std::copy(v.begin(), v.end(), rows.begin() + (4 * i + p) * 256);
      }
    }
    auto acts = Tensor<float>::from_data({orbits * 4, 256}, std::move(rows));
    equi::FitMConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 1;
    equi::FitReport report;
    equi::fit_m(acts, acts, cfg, &report);
    CHECK(report.loss_history[0] == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(report.identity_baseline_r2 == doctest::Approx(1.0).epsilon(1e-9));
  }

  // Activations generated by an exactly order-4 linear map (2x2 quarter-turn
  // rotation blocks), the structure the group action induces.
  {
    std::vector<double> truth_m(256 * 256, 0.0);
    for (std::size_t i = 0; i < 256; i += 2) {
      truth_m[i * 256 + (i + 1)] = -1.0;
      truth_m[(i + 1) * 256 + i] = 1.0;
    }

    std::vector<float> rows(orbits * 4 * 256);
    for (std::size_t i = 0; i < orbits; ++i) {
      std::vector<double> v(256);
      for (auto& e : v) e = rng.next_uniform(-1, 1);
      std::vector<double> cur = v;
      for (int p = 0; p < 4; ++p) {
        for (std::size_t j = 0; j < 256; ++j) {
          rows[(4 * i + p) * 256 + j] = static_cast<float>(cur[j]);
        }
        cur = matvec(truth_m, cur, 256);
      }
      // Note p=0 row is canonical; rows p=1..3 are successive applications.
    }
    auto acts = Tensor<float>::from_data({orbits * 4, 256}, std::move(rows));
    equi::FitMConfig cfg;
    cfg.epochs = 300;
    cfg.learning_rate = 1e-2f;  // the quarter-turn target is O(1) away from identity
    cfg.seed = 2;
    equi::FitReport report;
    auto m = equi::fit_m(acts, acts, cfg, &report);
    CHECK(report.r2_mean > 0.99);
    CHECK(report.r2_mean > report.identity_baseline_r2);
    CHECK(report.loss_history.back() < report.loss_history.front());
    // Epoch means trend down; no epoch may exceed the starting loss.
    for (double l : report.loss_history) CHECK(l <= report.loss_history.front() * 1.05);
    // The fitted matrix reproduces one application of the ground truth.
    auto x0 = Tensor<float>::from_data(
        {1, 256}, std::vector<float>(acts.values().begin(), acts.values().begin() + 256));
    auto pred = equi::predict_transformed(m, x0, 1);
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(std::abs(pred.values()[j] - acts.values()[256 + j]) < 0.1);
    }
  }
}

TEST_CASE("equivariant_reconstruct: identity transform degenerates to the plain SAE") {
  auto model = sae::build_sae(sae::Variant::invariant, 8, 3);
  Rng rng(13);
  std::vector<float> av(5 * 256);
  for (auto& v : av) v = static_cast<float>(rng.next_uniform(-1, 1));
  auto acts = Tensor<float>::from_data({5, 256}, std::move(av));

  auto plain = sae::decode(model, sae::encode(model, acts));
  auto er = equi::equivariant_reconstruct(model, equi::identity_transform(), acts);
  CHECK(std::equal(er.reconstructions.begin(), er.reconstructions.end(),
                   plain.values().begin()));
  for (int p : er.inferred_powers) CHECK(p == 0);
}

TEST_CASE("equivariant_reconstruct recovers a planted power") {
  // Constant encoder: every input reconstructs to the same canonical c, so
  // an activation synthesized as M^2 c has zero residual exactly at p=2.
  auto model = sae::build_sae(sae::Variant::regular, 4, 7);
  std::fill(model.w_enc().values_mut().begin(), model.w_enc().values_mut().end(), 0.0f);
  Rng rng(17);
  for (auto& v : model.b_enc().values_mut()) v = static_cast<float>(rng.next_uniform(0.1, 1.0));

  std::vector<float> mv(256 * 256, 0.0f);
  for (std::size_t i = 0; i < 256; ++i) {
    mv[i * 256 + (i + 1) % 256] = 1.0f;  // cyclic shift, period far above 4
  }
  TransformMatrix m{Tensor<float>::from_data({256, 256}, std::move(mv))};

  auto any = Tensor<float>::from_data({1, 256}, std::vector<float>(256, 0.5f));
  auto c = sae::decode(model, sae::encode(model, any));
  auto planted = equi::predict_transformed(m, c, 2);

  auto er = equi::equivariant_reconstruct(model, m, planted);
  CHECK(er.inferred_powers[0] == 2);
  CHECK(std::equal(er.reconstructions.begin(), er.reconstructions.end(),
                   planted.values().begin()));
}

TEST_CASE("classify_dictionary_features labels planted directions exactly") {
  auto model = sae::build_sae(sae::Variant::regular, 4, 19);
  auto wd = model.w_dec().values_mut();
  std::fill(wd.begin(), wd.end(), 0.0f);
  const std::size_t nl = model.n_latents;
  wd[0 * nl + 0] = 1.0f;  // column 0 = e0, eigenvalue +1
  wd[1 * nl + 1] = 1.0f;  // column 1 = e1, eigenvalue -1
  wd[2 * nl + 2] = 0.5f;  // column 2 = e2 scaled, eigenvalue +1
  // column 3 left all-zero: dead

  std::vector<float> mv(256 * 256, 0.0f);
  for (std::size_t i = 0; i < 256; ++i) mv[i * 256 + i] = (i == 1) ? -1.0f : 1.0f;
  TransformMatrix m{Tensor<float>::from_data({256, 256}, std::move(mv))};

  auto fc = equi::classify_dictionary_features(model, m, 0.9);
  CHECK(fc.similarities[0] == 1.0);
  CHECK(fc.labels[0] == equi::FeatureLabel::invariant);
  CHECK(fc.similarities[1] == -1.0);
  CHECK(fc.labels[1] == equi::FeatureLabel::equivariant);
  CHECK(fc.similarities[2] == 1.0);
  CHECK(fc.labels[2] == equi::FeatureLabel::invariant);
  CHECK(fc.labels[3] == equi::FeatureLabel::dead);
  CHECK(fc.dead_count >= 1);
  CHECK(fc.invariant_count >= 2);
}

TEST_CASE("transform matrix file round trip") {
  Rng rng(23);
  std::vector<float> mv(256 * 256);
  for (auto& v : mv) v = static_cast<float>(rng.next_uniform(-1, 1));
  TransformMatrix m{Tensor<float>::from_data({256, 256}, std::move(mv))};
  equi::save_transform("m_test.etns", m);
  auto back = equi::load_transform("m_test.etns");
  CHECK(std::equal(back.m.values().begin(), back.m.values().end(), m.m.values().begin()));
  std::remove("m_test.etns");
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "eqsae/optim.hpp"
#include "eqsae/rng.hpp"
#include "eqsae/tensor.hpp"
#include "eqsae/tensor_io.hpp"

using eqsae::Rng;
using namespace eqsae::num;

namespace {

// ---------------------------------------------------------------------------
// Independent oracles. These recompute the forward definitions with plain
// loop nests and never touch the graph machinery they are checking.
// ---------------------------------------------------------------------------

std::vector<double> oracle_linear(const std::vector<double>& x, std::size_t batch,
                                  std::size_t in, const std::vector<double>& w,
                                  std::size_t out, const std::vector<double>& b) {
  std::vector<double> y(batch * out, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += w[j * in + k] * x[i * in + k];
      y[i * out + j] = acc + b[j];
    }
  }
  return y;
}

std::vector<double> oracle_conv2d(const std::vector<double>& x, std::size_t batch,
                                  std::size_t ci, std::size_t h, std::size_t w,
                                  const std::vector<double>& k, std::size_t co,
                                  std::size_t kh, std::size_t kw, int stride, int pad,
                                  std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> y(batch * co * oh * ow, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t cc = 0; cc < ci; ++cc)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t e = 0; e < kw; ++e) {
                const long ih = static_cast<long>(i) * stride - pad + static_cast<long>(a);
                const long iw = static_cast<long>(j) * stride - pad + static_cast<long>(e);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(h) ||
                    iw >= static_cast<long>(w))
                  continue;
                acc += x[((b * ci + cc) * h + ih) * w + iw] *
                       k[((c * ci + cc) * kh + a) * kw + e];
              }
          y[((b * co + c) * oh + i) * ow + j] = acc;
        }
  return y;
}

double oracle_mse(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_uniform(lo, hi);
  return v;
}

template <typename T>
double dot_values(const Tensor<T>& a, const Tensor<T>& b) {
  double acc = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) acc += double(av[i]) * double(bv[i]);
  return acc;
}

}  // namespace

TEST_CASE("apply_linear matches trivial examples") {
  auto x = Tensor<double>::from_data({1, 2}, {1, 2});
  auto w = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::zeros({2});
  auto y = apply_linear(x, w, b);
  CHECK(y.values()[0] == 1.0);
  CHECK(y.values()[1] == 2.0);

  auto x2 = Tensor<double>::from_data({1, 2}, {1, 1});
  auto w2 = Tensor<double>::from_data({1, 2}, {2, 3});
  auto b2 = Tensor<double>::from_data({1}, {-5});
  auto y2 = apply_linear(x2, w2, b2);
  CHECK(y2.values()[0] == 0.0);
}

TEST_CASE("apply_linear matches the loop-nest oracle exactly in double mode") {
  Rng rng(11);
  const std::size_t batch = 3, in = 5, out = 4;
  auto xv = random_vec(rng, batch * in);
  auto wv = random_vec(rng, out * in);
  auto bv = random_vec(rng, out);
  auto y = apply_linear(Tensor<double>::from_data({batch, in}, xv),
                        Tensor<double>::from_data({out, in}, wv),
                        Tensor<double>::from_data({out}, bv));
  auto expect = oracle_linear(xv, batch, in, wv, out, bv);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.values()[i] == expect[i]);
}

TEST_CASE("apply_linear rejects mismatched shapes") {
  auto x = Tensor<double>::zeros({2, 3});
  auto w = Tensor<double>::zeros({4, 5});
  auto b = Tensor<double>::zeros({4});
  CHECK_THROWS_AS(apply_linear(x, w, b), ShapeError);
}

TEST_CASE("conv2d trivial and derived examples") {
  // 1x1 kernel is plain scaling.
  auto x = Tensor<double>::from_data({1, 1, 1, 1}, {5});
  auto k = Tensor<double>::from_data({1, 1, 1, 1}, {2});
  auto y = apply_conv2d(x, k, 1, 0);
  CHECK(y.values()[0] == 10.0);

  // All-ones 3x3 image and kernel with pad 1: center sees all 9, corners 4.
  auto x2 = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto k2 = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto y2 = apply_conv2d(x2, k2, 1, 1);
  REQUIRE(y2.dims() == Dims{1, 1, 3, 3});
  CHECK(y2.values()[4] == 9.0);
  CHECK(y2.values()[0] == 4.0);
  CHECK(y2.values()[2] == 4.0);
  CHECK(y2.values()[6] == 4.0);
  CHECK(y2.values()[8] == 4.0);
}

TEST_CASE("conv2d matches the loop-nest oracle exactly in double mode") {
  Rng rng(12);
  const std::size_t batch = 2, ci = 1, h = 8, w = 8, co = 3, kh = 3, kw = 3;
  auto xv = random_vec(rng, batch * ci * h * w);
  auto kv = random_vec(rng, co * ci * kh * kw);
  for (const auto& [stride, pad] : std::vector<std::pair<int, int>>{{1, 0}, {2, 1}, {1, 1}}) {
    std::size_t oh = 0, ow = 0;
    auto expect = oracle_conv2d(xv, batch, ci, h, w, kv, co, kh, kw, stride, pad, oh, ow);
    auto y = apply_conv2d(Tensor<double>::from_data({batch, ci, h, w}, xv),
                          Tensor<double>::from_data({co, ci, kh, kw}, kv), stride, pad);
    REQUIRE(y.dims() == Dims{batch, co, oh, ow});
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.values()[i] == expect[i]);
  }
}

TEST_CASE("conv2d whole-kernel case matches the oracle exactly") {
  Rng rng(13);
  const std::size_t batch = 2, ci = 4, h = 5, w = 5, co = 6;
  auto xv = random_vec(rng, batch * ci * h * w);
  auto kv = random_vec(rng, co * ci * h * w);
  std::size_t oh = 0, ow = 0;
  auto expect = oracle_conv2d(xv, batch, ci, h, w, kv, co, h, w, 1, 0, oh, ow);
  auto y = apply_conv2d(Tensor<double>::from_data({batch, ci, h, w}, xv),
                        Tensor<double>::from_data({co, ci, h, w}, kv), 1, 0);
  REQUIRE(y.dims() == Dims{batch, co, 1, 1});
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.values()[i] == expect[i]);
}

TEST_CASE("conv2d rejects non-positive output extents") {
  auto x = Tensor<double>::zeros({1, 1, 2, 2});
  auto k = Tensor<double>::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(apply_conv2d(x, k, 1, 0), ShapeError);
}

TEST_CASE("conv_transpose2d stamps the kernel for a unit input") {
  auto x = Tensor<double>::from_data({1, 1, 1, 1}, {1});
  auto k = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = apply_conv_transpose2d(x, k, 1, 0, 0);
  REQUIRE(y.dims() == Dims{1, 1, 2, 2});
  CHECK(y.values()[0] == 1.0);
  CHECK(y.values()[1] == 2.0);
  CHECK(y.values()[2] == 3.0);
  CHECK(y.values()[3] == 4.0);
}

TEST_CASE("conv / conv_transpose adjoint identity") {
  // <conv(x), y> == <x, conv_transpose(y)> with the same kernel memory.
  Rng rng(14);
  struct Case {
    std::size_t ci, h, w, co, kh, kw;
    int stride, pad, out_pad;
  };
  for (const Case& c : {Case{2, 6, 6, 3, 3, 3, 1, 0, 0}, Case{1, 8, 8, 2, 3, 3, 2, 1, 1},
                        Case{3, 4, 4, 2, 4, 4, 1, 0, 0}, Case{2, 5, 5, 4, 3, 3, 2, 1, 0}}) {
    auto xv = random_vec(rng, 2 * c.ci * c.h * c.w);
    auto kv = random_vec(rng, c.co * c.ci * c.kh * c.kw);
    auto x = Tensor<double>::from_data({2, c.ci, c.h, c.w}, xv);
    auto kernel_fwd = Tensor<double>::from_data({c.co, c.ci, c.kh, c.kw}, kv);
    auto cx = apply_conv2d(x, kernel_fwd, c.stride, c.pad);

    // y shaped like conv output, but grown by out_pad so the transpose maps
    // back onto an input-sized grid plus the extra border.
    auto yv = random_vec(rng, cx.size());
    auto y = Tensor<double>::from_data(cx.dims(), yv);
    auto kernel_t = Tensor<double>::from_data({c.co, c.ci, c.kh, c.kw}, kv);
    auto ty = apply_conv_transpose2d(y, kernel_t, c.stride, c.pad, c.out_pad);

    if (c.out_pad == 0) {
      REQUIRE(ty.dims() == x.dims());
      const double lhs = dot_values(cx, y);
      const double rhs = dot_values(x, ty);
      CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max({std::abs(lhs), std::abs(rhs), 1.0}));
    } else {
      // With out_pad the transpose output strictly contains the adjoint
      // image; restrict to the original extent.
      const std::size_t hh = c.h, ww = c.w;
      double rhs = 0.0;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t cc = 0; cc < c.ci; ++cc)
          for (std::size_t i = 0; i < hh; ++i)
            for (std::size_t j = 0; j < ww; ++j)
              rhs += x.values()[((b * c.ci + cc) * hh + i) * ww + j] *
                     ty.values()[((b * c.ci + cc) * ty.dim(2) + i) * ty.dim(3) + j];
      const double lhs = dot_values(cx, y);
      CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max({std::abs(lhs), std::abs(rhs), 1.0}));
    }
  }
}

TEST_CASE("decoder chain of the 64x64 autoencoder restores the image shape") {
  auto z = Tensor<double>::full({1, 256, 1, 1}, 0.5);
  auto k1 = Tensor<double>::full({256, 32, 16, 16}, 0.01);
  auto h1 = apply_conv_transpose2d(z, k1, 1, 0, 0);
  REQUIRE(h1.dims() == Dims{1, 32, 16, 16});
  auto k2 = Tensor<double>::full({32, 16, 3, 3}, 0.01);
  auto h2 = apply_conv_transpose2d(h1, k2, 2, 1, 1);
  REQUIRE(h2.dims() == Dims{1, 16, 32, 32});
  auto k3 = Tensor<double>::full({16, 1, 3, 3}, 0.01);
  auto h3 = apply_conv_transpose2d(h2, k3, 2, 1, 1);
  REQUIRE(h3.dims() == Dims{1, 1, 64, 64});
}

TEST_CASE("relu basics") {
  auto x = Tensor<double>::from_data({1, 3}, {-1, 0, 2});
  auto y = relu(x);
  CHECK(y.values()[0] == 0.0);
  CHECK(y.values()[1] == 0.0);
  CHECK(y.values()[2] == 2.0);

  auto neg = relu(Tensor<double>::from_data({1, 2}, {-3, -0.5}));
  CHECK(neg.values()[0] == 0.0);
  CHECK(neg.values()[1] == 0.0);

  // Gradient: 1 above zero, 0 below (and 0 at exactly 0).
  auto p = Tensor<double>::param({1, 3}, {3, -3, 0});
  auto loss = mse(relu(p), Tensor<double>::zeros({1, 3}));
  backward(loss);
  auto g = p.grad();
  CHECK(g[0] == doctest::Approx(2.0 * 3 / 3).epsilon(1e-12));
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("topk keeps the K largest with lowest-index tie break") {
  auto x = Tensor<double>::from_data({1, 4}, {0.5, -1.0, 2.0, 0.1});
  auto y = topk(x, 2);
  CHECK(y.values()[0] == 0.5);
  CHECK(y.values()[1] == 0.0);
  CHECK(y.values()[2] == 2.0);
  CHECK(y.values()[3] == 0.0);

  auto full = topk(x, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(full.values()[i] == x.values()[i]);

  auto tie = topk(Tensor<double>::from_data({1, 3}, {1, 1, 0}), 1);
  CHECK(tie.values()[0] == 1.0);
  CHECK(tie.values()[1] == 0.0);
  CHECK(tie.values()[2] == 0.0);

  CHECK_THROWS_AS(topk(x, 0), ParamError);
  CHECK_THROWS_AS(topk(x, 5), ParamError);
}

TEST_CASE("topk row nonzero count never exceeds K") {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 16;
    const int k = 1 + static_cast<int>(rng.next_below(n));
    std::vector<double> vals(2 * n);
    for (auto& v : vals) {
      v = rng.next_unit() < 0.3 ? 0.0 : rng.next_uniform(-2, 2);
    }
    auto y = topk(Tensor<double>::from_data({2, n}, vals), k);
    for (std::size_t r = 0; r < 2; ++r) {
      int nonzero = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (y.values()[r * n + j] != 0.0) ++nonzero;
      }
      CHECK(nonzero <= k);
      // With at least k strictly positive candidates the count is exact.
      int positive = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (vals[r * n + j] > 0.0) ++positive;
      }
      if (positive >= k) CHECK(nonzero == k);
    }
  }
}

TEST_CASE("mse trivial and oracle cases") {
  auto a = Tensor<double>::from_data({2}, {1, 2});
  CHECK(mse(a, a).scalar() == 0.0);

  auto z = Tensor<double>::from_data({2}, {0, 0});
  auto b = Tensor<double>::from_data({2}, {2, 0});
  CHECK(mse(z, b).scalar() == 2.0);

  Rng rng(16);
  auto av = random_vec(rng, 40);
  auto bv = random_vec(rng, 40);
  const double got = mse(Tensor<double>::from_data({8, 5}, av),
                         Tensor<double>::from_data({8, 5}, bv))
                         .scalar();
  CHECK(got == oracle_mse(av, bv));

  CHECK_THROWS_AS(mse(a, Tensor<double>::zeros({3})), ShapeError);
}

TEST_CASE("backward on mse(x, 0) gives 2x/n") {
  auto x = Tensor<double>::param({1}, {3});
  auto loss = mse(x, Tensor<double>::zeros({1}));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward twice without rebuilding is an error") {
  auto x = Tensor<double>::param({1}, {3});
  auto loss = mse(x, Tensor<double>::zeros({1}));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), GraphError);
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  auto x = Tensor<double>::param({2}, {1, 2});
  auto y = relu(x);
  CHECK_THROWS_AS(backward(y), GraphError);

  auto detached = mse(Tensor<double>::from_data({1}, {1}), Tensor<double>::zeros({1}));
  CHECK_THROWS_AS(backward(detached), GraphError);
}

TEST_CASE("gradient is zero on dropped topk coordinates") {
  auto x = Tensor<double>::param({1, 4}, {0.5, -1.0, 2.0, 0.1});
  auto loss = mse(topk(x, 2), Tensor<double>::zeros({1, 4}));
  backward(loss);
  auto g = x.grad();
  CHECK(g[0] != 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] != 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("grad_check: linear layer") {
  Rng rng(21);
  auto x = Tensor<double>::param({3, 5}, random_vec(rng, 15));
  auto w = Tensor<double>::param({4, 5}, random_vec(rng, 20));
  auto b = Tensor<double>::param({4}, random_vec(rng, 4));
  auto target = Tensor<double>::from_data({3, 4}, random_vec(rng, 12));
  std::vector<Tensor<double>> params{x, w, b};
  auto report = grad_check(
      [&] { return mse(apply_linear(params[0], params[1], params[2]), target); }, params,
      1e-5, 1e-6);
  INFO(report.worst_location, " rel=", report.max_rel_error);
  CHECK(report.pass);
}

TEST_CASE("grad_check: conv2d and conv_transpose2d") {
  Rng rng(22);
  auto x = Tensor<double>::param({2, 2, 5, 5}, random_vec(rng, 100));
  auto k = Tensor<double>::param({3, 2, 3, 3}, random_vec(rng, 54));
  auto target = Tensor<double>::from_data({2, 3, 3, 3}, random_vec(rng, 54));
  std::vector<Tensor<double>> params{x, k};
  auto report = grad_check(
      [&] { return mse(apply_conv2d(params[0], params[1], 2, 1), target); }, params, 1e-5,
      1e-6);
  INFO(report.worst_location, " rel=", report.max_rel_error);
  CHECK(report.pass);

  auto xt = Tensor<double>::param({2, 3, 3, 3}, random_vec(rng, 54));
  auto kt = Tensor<double>::param({3, 2, 3, 3}, random_vec(rng, 54));
  auto target_t = Tensor<double>::from_data({2, 2, 6, 6}, random_vec(rng, 144));
  std::vector<Tensor<double>> params_t{xt, kt};
  auto report_t = grad_check(
      [&] { return mse(apply_conv_transpose2d(params_t[0], params_t[1], 2, 1, 1), target_t); },
      params_t, 1e-5, 1e-6);
  INFO(report_t.worst_location, " rel=", report_t.max_rel_error);
  CHECK(report_t.pass);
}

TEST_CASE("grad_check: relu away from the kink and composite graph") {
  Rng rng(23);
  std::vector<double> xv = random_vec(rng, 12);
  for (auto& v : xv) v += (v >= 0 ? 0.15 : -0.15);  // keep |x| > 0.1
  auto x = Tensor<double>::param({3, 4}, xv);
  auto w = Tensor<double>::param({2, 4}, random_vec(rng, 8));
  auto b = Tensor<double>::param({2}, random_vec(rng, 2));
  auto target = Tensor<double>::from_data({3, 2}, random_vec(rng, 6));
  std::vector<Tensor<double>> params{x, w, b};
  auto report = grad_check(
      [&] {
        return mse(apply_linear(relu(params[0]), params[1], params[2]), target);
      },
      params, 1e-5, 1e-6);
  INFO(report.worst_location, " rel=", report.max_rel_error);
  CHECK(report.pass);
}

TEST_CASE("adam: analytic first step and zero-gradient fixed point") {
  // One step with constant gradient: bias correction makes the update
  // -lr * g / (|g| + eps') which tends to -lr * sign(g).
  auto p = Tensor<float>::param({2}, {1.0f, -2.0f});
  std::vector<Tensor<float>> params{p};
  auto state = init_adam(std::span<const Tensor<float>>(params), 0.1f);
  std::vector<float> g{0.5f, -0.25f};
  std::vector<std::span<const float>> grads{std::span<const float>(g)};
  adam_step(std::span<Tensor<float>>(params), std::span<const std::span<const float>>(grads),
            state);
  CHECK(params[0].values()[0] == doctest::Approx(1.0f - 0.1f).epsilon(1e-4));
  CHECK(params[0].values()[1] == doctest::Approx(-2.0f + 0.1f).epsilon(1e-4));
  CHECK(state.step_count == 1);

  // Zero gradient leaves parameters untouched.
  auto q = Tensor<float>::param({2}, {3.0f, 4.0f});
  std::vector<Tensor<float>> params2{q};
  auto state2 = init_adam(std::span<const Tensor<float>>(params2), 0.1f);
  std::vector<float> zero{0.0f, 0.0f};
  std::vector<std::span<const float>> grads2{std::span<const float>(zero)};
  adam_step(std::span<Tensor<float>>(params2), std::span<const std::span<const float>>(grads2),
            state2);
  CHECK(params2[0].values()[0] == 3.0f);
  CHECK(params2[0].values()[1] == 4.0f);
}

TEST_CASE("adam: two steps on f(w)=w^2 match a scalar recurrence oracle") {
  // Oracle: hand-rolled scalar Adam on the same function.
  double w = 1.0;
  double m = 0.0, v = 0.0;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> expected;
  for (int t = 1; t <= 2; ++t) {
    const double g = 2.0 * w;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
    expected.push_back(w);
  }

  auto p = Tensor<double>::param({1}, {1.0});
  std::vector<Tensor<double>> params{p};
  auto state = init_adam(std::span<const Tensor<double>>(params), 0.1);
  for (int t = 0; t < 2; ++t) {
    auto loss = mse(params[0], Tensor<double>::zeros({1}));  // w^2
    backward(loss);
    adam_step(std::span<Tensor<double>>(params), state);
    CHECK(params[0].values()[0] == doctest::Approx(expected[t]).epsilon(1e-12));
  }
}

TEST_CASE("tensor file round trip and dtype guard") {
  Rng rng(31);
  auto t = Tensor<float>::from_data({2, 3}, {1.5f, -2.25f, 0.0f, 3.0f, 4.5f, -0.125f});
  const std::string path = "roundtrip_test.etns";
  write_tensor(path, t);
  auto back = read_tensor<float>(path);
  REQUIRE(back.dims() == t.dims());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.values()[i] == t.values()[i]);
  CHECK_THROWS_AS(read_tensor<double>(path), IoError);
  std::remove(path.c_str());
}

TEST_CASE("determinism: identical graphs give bitwise identical results") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> xv(64 * 32), wv(16 * 32), bv(16);
    for (auto& v : xv) v = static_cast<float>(rng.next_uniform(-1, 1));
    for (auto& v : wv) v = static_cast<float>(rng.next_uniform(-1, 1));
    for (auto& v : bv) v = static_cast<float>(rng.next_uniform(-1, 1));
    auto y = apply_linear(Tensor<float>::from_data({64, 32}, xv),
                          Tensor<float>::from_data({16, 32}, wv),
                          Tensor<float>::from_data({16}, bv));
    return std::vector<float>(y.values().begin(), y.values().end());
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}

TEST_CASE("non-finite values are detectable, never silent") {
  auto t = Tensor<double>::from_data({2}, {1.0, std::nan("")});
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS(t.check_finite("unit"));
  auto ok = Tensor<double>::from_data({2}, {1.0, 2.0});
  CHECK(ok.all_finite());
}

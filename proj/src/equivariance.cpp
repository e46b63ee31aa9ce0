#include "eqsae/equivariance.hpp"

#include <cmath>

#include "eqsae/optim.hpp"
#include "eqsae/rng.hpp"
#include "eqsae/tensor_io.hpp"

namespace eqsae::equi {

using num::Dims;
using num::Tensor;

namespace {
constexpr std::size_t kDim = 256;

std::vector<float> identity_values(std::size_t dim) {
  std::vector<float> v(dim * dim, 0.0f);
  for (std::size_t i = 0; i < dim; ++i) v[i * dim + i] = 1.0f;
  return v;
}

// Plain forward application of M to each row, no gradients.
Tensor<float> apply_m(const Tensor<float>& x, const Tensor<float>& m) {
  auto zero = Tensor<float>::zeros({m.dim(0)});
  return num::apply_linear(x, m, zero);
}

}  // namespace

TransformMatrix identity_transform(std::size_t dim) {
  return {Tensor<float>::from_data({dim, dim}, identity_values(dim))};
}

double r_squared(const std::vector<double>& predicted, const std::vector<double>& truth,
                 std::size_t n, std::size_t d) {
  if (predicted.size() != n * d || truth.size() != n * d) {
    throw num::ShapeError("r_squared: size mismatch");
  }
  if (n < 2) throw num::ParamError("r_squared needs at least 2 rows");
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += truth[i * d + j];
  for (auto& m : mean) m /= static_cast<double>(n);

  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double r = predicted[i * d + j] - truth[i * d + j];
      const double t = truth[i * d + j] - mean[j];
      ss_res += r * r;
      ss_tot += t * t;
    }
  }
  if (ss_tot == 0.0) throw num::ParamError("r_squared undefined: zero total variance");
  return 1.0 - ss_res / ss_tot;
}

double r_squared(const Tensor<float>& predicted, const Tensor<float>& truth) {
  if (predicted.dims() != truth.dims() || predicted.dims().size() != 2) {
    throw num::ShapeError("r_squared expects matching [n, d] tensors");
  }
  auto pv = predicted.values();
  auto tv = truth.values();
  return r_squared(std::vector<double>(pv.begin(), pv.end()),
                   std::vector<double>(tv.begin(), tv.end()), predicted.dim(0),
                   predicted.dim(1));
}

num::Tensor<float> predict_transformed(const TransformMatrix& m,
                                       const Tensor<float>& canonical, int p) {
  if (p < 0 || p > 3) throw num::ParamError("predict_transformed: p must be in [0, 3]");
  Tensor<float> cur = canonical;
  for (int i = 0; i < p; ++i) cur = apply_m(cur, m.m);
  return cur;
}

namespace {

struct OrbitView {
  std::size_t orbits = 0;
  std::span<const float> rows;
};

OrbitView orbit_view(const Tensor<float>& activations, const char* what) {
  if (activations.dims().size() != 2 || activations.dim(1) != kDim ||
      activations.dim(0) % 4 != 0 || activations.dim(0) == 0) {
    throw num::ParamError(std::string(what) +
                          " requires orbit-grouped [4n, 256] activations, got " +
                          num::dims_to_string(activations.dims()));
  }
  return {activations.dim(0) / 4, activations.values()};
}

std::array<double, 4> r2_per_power_of(const Tensor<float>& m_or_identity,
                                      const OrbitView& eval) {
  // Collect canonical rows, then compare M^p psi(x) against psi(g^p x)
  // (p = 4 wraps to the canonical activation itself).
  std::vector<float> canon(eval.orbits * kDim);
  for (std::size_t i = 0; i < eval.orbits; ++i) {
    std::copy_n(eval.rows.data() + 4 * i * kDim, kDim, canon.data() + i * kDim);
  }
  auto cur = Tensor<float>::from_data({eval.orbits, kDim}, std::move(canon));
  auto zero = Tensor<float>::zeros({kDim});

  std::array<double, 4> out{};
  for (int p = 1; p <= 4; ++p) {
    cur = num::apply_linear(cur, m_or_identity, zero);
    std::vector<double> pred(cur.values().begin(), cur.values().end());
    std::vector<double> truth(eval.orbits * kDim);
    for (std::size_t i = 0; i < eval.orbits; ++i) {
      const std::size_t row = 4 * i + (p % 4);
      for (std::size_t j = 0; j < kDim; ++j) {
        truth[i * kDim + j] = static_cast<double>(eval.rows[row * kDim + j]);
      }
    }
    out[p - 1] = r_squared(pred, truth, eval.orbits, kDim);
  }
  return out;
}

}  // namespace

TransformMatrix fit_m(const Tensor<float>& train_activations,
                      const Tensor<float>& eval_activations, const FitMConfig& config,
                      FitReport* report) {
  const OrbitView train = orbit_view(train_activations, "fit_m");
  const OrbitView eval = orbit_view(eval_activations, "fit_m evaluation");

  auto m = Tensor<float>::param({kDim, kDim}, identity_values(kDim));
  std::vector<Tensor<float>> params{m};
  auto state = num::init_adam(std::span<const Tensor<float>>(params), config.learning_rate);
  auto zero = Tensor<float>::zeros({kDim});

  std::vector<std::uint32_t> order(train.orbits);
  for (std::size_t i = 0; i < train.orbits; ++i) order[i] = static_cast<std::uint32_t>(i);

  std::vector<double> history;
  history.reserve(config.epochs);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(derive_seed(config.seed, "fit_m_epoch", "", static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order.data(), order.size());

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < train.orbits;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(train.orbits, start + static_cast<std::size_t>(config.batch_size));
      const std::size_t b = end - start;

      std::vector<float> canon(b * kDim);
      std::array<std::vector<float>, 4> targets;
      for (auto& t : targets) t.resize(b * kDim);
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t orbit = order[i];
        std::copy_n(train.rows.data() + 4 * orbit * kDim, kDim,
                    canon.data() + (i - start) * kDim);
        for (int p = 1; p <= 4; ++p) {
          std::copy_n(train.rows.data() + (4 * orbit + (p % 4)) * kDim, kDim,
                      targets[p - 1].data() + (i - start) * kDim);
        }
      }

      // M^p by chained application; one scalar root sums the four power
      // terms so a single backward sweep sees every use of M.
      auto cur = Tensor<float>::from_data({b, kDim}, std::move(canon));
      std::vector<Tensor<float>> terms;
      terms.reserve(4);
      for (int p = 1; p <= 4; ++p) {
        cur = num::apply_linear(cur, params[0], zero);
        auto target = Tensor<float>::from_data({b, kDim}, std::move(targets[p - 1]));
        terms.push_back(num::mse(cur, target));
      }
      auto loss = num::sum_scalars(terms);
      if (!loss.all_finite()) {
        throw std::runtime_error("fit_m: non-finite loss at epoch " + std::to_string(epoch));
      }
      num::backward(loss);
      num::adam_step(std::span<Tensor<float>>(params), state);
      epoch_loss += static_cast<double>(loss.scalar()) / 4.0 * static_cast<double>(b);
      seen += b;
    }
    history.push_back(epoch_loss / static_cast<double>(seen));
  }

  TransformMatrix out{params[0]};
  if (report) {
    report->epochs = config.epochs;
    report->loss_history = std::move(history);
    report->r2_per_power = r2_per_power_of(params[0], eval);
    auto identity = Tensor<float>::from_data({kDim, kDim}, identity_values(kDim));
    report->identity_r2_per_power = r2_per_power_of(identity, eval);
    double mean = 0.0, id_mean = 0.0;
    for (int p = 0; p < 4; ++p) {
      mean += report->r2_per_power[p];
      id_mean += report->identity_r2_per_power[p];
    }
    mean /= 4.0;
    id_mean /= 4.0;
    double var = 0.0;
    for (int p = 0; p < 4; ++p) {
      const double d = report->r2_per_power[p] - mean;
      var += d * d;
    }
    report->r2_mean = mean;
    report->r2_std = std::sqrt(var / 4.0);
    report->identity_baseline_r2 = id_mean;
  }
  return out;
}

EquivariantReconstruction equivariant_reconstruct(const sae::SaeModel& sae_model,
                                                  const TransformMatrix& m,
                                                  const Tensor<float>& activations) {
  const std::size_t n = activations.dim(0);
  auto canonical = sae::decode(sae_model, sae::encode(sae_model, activations));

  // Candidate reconstructions M^p c for p = 0..3.
  std::array<std::vector<float>, 4> candidates;
  candidates[0].assign(canonical.values().begin(), canonical.values().end());
  Tensor<float> cur = canonical;
  for (int p = 1; p < 4; ++p) {
    cur = apply_m(cur, m.m);
    candidates[p].assign(cur.values().begin(), cur.values().end());
  }

  EquivariantReconstruction out;
  out.reconstructions.resize(n * kDim);
  out.inferred_powers.resize(n);
  auto av = activations.values();
  for (std::size_t i = 0; i < n; ++i) {
    int best_p = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int p = 0; p < 4; ++p) {
      double res = 0.0;
      const float* c = candidates[p].data() + i * kDim;
      for (std::size_t j = 0; j < kDim; ++j) {
        const double d = static_cast<double>(av[i * kDim + j]) - static_cast<double>(c[j]);
        res += d * d;
      }
      if (res < best) {  // strict: ties stay with the smallest p
        best = res;
        best_p = p;
      }
    }
    out.inferred_powers[i] = best_p;
    std::copy_n(candidates[best_p].data() + i * kDim, kDim,
                out.reconstructions.data() + i * kDim);
  }
  return out;
}

FeatureClassification classify_dictionary_features(const sae::SaeModel& sae_model,
                                                   const TransformMatrix& m,
                                                   double threshold) {
  const std::size_t nl = static_cast<std::size_t>(sae_model.n_latents);
  const auto wd = sae_model.w_dec().values();  // [256, n_latents]
  const auto mv = m.m.values();                // [256, 256]

  FeatureClassification out;
  out.labels.resize(nl);
  out.similarities.resize(nl);

  std::vector<double> col(kDim), mcol(kDim);
  for (std::size_t i = 0; i < nl; ++i) {
    for (std::size_t r = 0; r < kDim; ++r) col[r] = static_cast<double>(wd[r * nl + i]);
    double norm_sq = 0.0;
    for (double v : col) norm_sq += v * v;
    if (norm_sq == 0.0) {
      out.labels[i] = FeatureLabel::dead;
      out.similarities[i] = 0.0;
      out.dead_count += 1;
      continue;
    }
    for (std::size_t r = 0; r < kDim; ++r) {
      double acc = 0.0;
      for (std::size_t cidx = 0; cidx < kDim; ++cidx) {
        acc += static_cast<double>(mv[r * kDim + cidx]) * col[cidx];
      }
      mcol[r] = acc;
    }
    double dot = 0.0, mnorm_sq = 0.0;
    for (std::size_t r = 0; r < kDim; ++r) {
      dot += col[r] * mcol[r];
      mnorm_sq += mcol[r] * mcol[r];
    }
    const double sim =
        mnorm_sq == 0.0 ? 0.0 : dot / (std::sqrt(norm_sq) * std::sqrt(mnorm_sq));
    out.similarities[i] = sim;
    if (sim > threshold) {
      out.labels[i] = FeatureLabel::invariant;
      out.invariant_count += 1;
    } else {
      out.labels[i] = FeatureLabel::equivariant;
      out.equivariant_count += 1;
    }
  }
  return out;
}

void save_transform(const std::string& path, const TransformMatrix& m) {
  num::write_tensor(path, m.m);
}

TransformMatrix load_transform(const std::string& path) {
  auto t = num::read_tensor<float>(path);
  if (t.dims() != Dims{kDim, kDim}) {
    throw num::IoError("transform matrix in " + path + " has unexpected shape");
  }
  return {t};
}

}  // namespace eqsae::equi

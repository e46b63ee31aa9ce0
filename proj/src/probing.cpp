#include "eqsae/probing.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "eqsae/parallel.hpp"
#include "eqsae/rng.hpp"

namespace eqsae::probe {

void stratified_split(const std::vector<std::uint8_t>& labels, double train_frac,
                      std::uint64_t seed, std::vector<std::uint32_t>& train_idx,
                      std::vector<std::uint32_t>& test_idx) {
  std::vector<std::uint32_t> pos, neg;
  for (std::uint32_t i = 0; i < labels.size(); ++i) {
    (labels[i] ? pos : neg).push_back(i);
  }
  Rng rng(seed);
  rng.shuffle(pos.data(), pos.size());
  rng.shuffle(neg.data(), neg.size());
  train_idx.clear();
  test_idx.clear();
  for (auto* cls : {&pos, &neg}) {
    const std::size_t cut = static_cast<std::size_t>(
        std::floor(train_frac * static_cast<double>(cls->size())));
    for (std::size_t i = 0; i < cls->size(); ++i) {
      (i < cut ? train_idx : test_idx).push_back((*cls)[i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
}

TruncationSelection select_top_latents(const float* latents, std::size_t n_train,
                                       std::size_t n_latents,
                                       const std::vector<std::uint8_t>& labels, int L) {
  if (labels.size() != n_train) throw num::ShapeError("select_top_latents: label count");
  std::size_t n_pos = 0;
  for (auto l : labels) n_pos += l ? 1 : 0;
  const std::size_t n_neg = n_train - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw num::ParamError("select_top_latents: training data has a single class");
  }
  if (L < 1 || static_cast<std::size_t>(L) > n_latents) {
    throw num::ParamError("select_top_latents: invalid L");
  }

  std::vector<double> mean_pos(n_latents, 0.0), mean_neg(n_latents, 0.0);
  for (std::size_t i = 0; i < n_train; ++i) {
    auto& acc = labels[i] ? mean_pos : mean_neg;
    const float* row = latents + i * n_latents;
    for (std::size_t j = 0; j < n_latents; ++j) acc[j] += static_cast<double>(row[j]);
  }
  std::vector<double> score(n_latents);
  for (std::size_t j = 0; j < n_latents; ++j) {
    score[j] = std::abs(mean_pos[j] / static_cast<double>(n_pos) -
                        mean_neg[j] / static_cast<double>(n_neg));
  }

  std::vector<std::uint32_t> idx(n_latents);
  for (std::size_t j = 0; j < n_latents; ++j) idx[j] = static_cast<std::uint32_t>(j);
  std::partial_sort(idx.begin(), idx.begin() + L, idx.end(),
                    [&score](std::uint32_t a, std::uint32_t b) {
                      if (score[a] != score[b]) return score[a] > score[b];
                      return a < b;
                    });
  TruncationSelection sel;
  sel.selected.assign(idx.begin(), idx.begin() + L);
  sel.scores.reserve(L);
  for (auto j : sel.selected) sel.scores.push_back(score[j]);
  return sel;
}

double f1_score(const std::vector<std::uint8_t>& predictions,
                const std::vector<std::uint8_t>& labels) {
  if (predictions.size() != labels.size()) throw num::ShapeError("f1_score: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] && labels[i]) ++tp;
    else if (predictions[i] && !labels[i]) ++fp;
    else if (!predictions[i] && labels[i]) ++fn;
  }
  if (tp == 0) return 0.0;  // precision + recall == 0 when tp == 0
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

namespace {

std::vector<float> gather_rows(const std::vector<float>& src, std::size_t f,
                               const std::vector<std::uint32_t>& rows) {
  std::vector<float> out(rows.size() * f);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::size_t>(rows[i]) * f, f,
                out.begin() + i * f);
  }
  return out;
}

std::vector<std::uint8_t> gather_labels(const std::vector<std::uint8_t>& src,
                                        const std::vector<std::uint32_t>& rows) {
  std::vector<std::uint8_t> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = src[rows[i]];
  return out;
}

double dot_f(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

}  // namespace

double knn_probe(const ProbeDataset& data) {
  constexpr std::size_t kNeighbors = 16;
  if (data.train_idx.size() < kNeighbors) {
    throw num::ParamError("knn_probe needs at least 16 training points");
  }
  if (data.test_idx.empty()) throw num::ParamError("knn_probe: empty test split");
  const std::size_t f = data.f;
  const auto train = gather_rows(data.features, f, data.train_idx);
  const auto test = gather_rows(data.features, f, data.test_idx);
  const auto train_labels = gather_labels(data.labels, data.train_idx);
  const auto test_labels = gather_labels(data.labels, data.test_idx);
  const std::size_t n_train = data.train_idx.size();

  std::vector<double> train_norm(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    train_norm[i] = dot_f(train.data() + i * f, train.data() + i * f, f);
  }

  std::vector<std::uint8_t> pred(test.size() / f);
  std::vector<std::pair<double, std::uint32_t>> dist(n_train);
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const float* q = test.data() + t * f;
    const double qn = dot_f(q, q, f);
    for (std::size_t i = 0; i < n_train; ++i) {
      const double d2 = qn + train_norm[i] - 2.0 * dot_f(q, train.data() + i * f, f);
      dist[i] = {d2, static_cast<std::uint32_t>(i)};
    }
    std::partial_sort(dist.begin(), dist.begin() + kNeighbors, dist.end());
    std::size_t votes = 0;
    for (std::size_t k = 0; k < kNeighbors; ++k) votes += train_labels[dist[k].second];
    pred[t] = votes >= kNeighbors / 2 ? 1 : 0;  // 8/8 tie counts positive
  }
  return f1_score(pred, test_labels);
}

double logreg_probe(const ProbeDataset& data, std::uint64_t seed) {
  return logreg_probe(data, seed, LogRegConfig{});
}

double logreg_probe(const ProbeDataset& data, std::uint64_t seed, const LogRegConfig& cfg) {
  if (data.train_idx.empty() || data.test_idx.empty()) {
    throw num::ParamError("logreg_probe: empty split");
  }
  const std::size_t f = data.f;
  const auto train = gather_rows(data.features, f, data.train_idx);
  const auto train_labels = gather_labels(data.labels, data.train_idx);
  const std::size_t n = data.train_idx.size();

  std::vector<double> w(f, 0.0);
  double bias = 0.0;
  std::vector<std::uint32_t> order(n);
  for (std::uint32_t i = 0; i < n; ++i) order[i] = i;
  std::vector<double> grad_w(f);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(seed, "logreg_epoch", "", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.data(), order.size());
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::fill(grad_w.begin(), grad_w.end(), 0.0);
      double grad_b = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const float* row = train.data() + static_cast<std::size_t>(order[i]) * f;
        double s = bias;
        for (std::size_t j = 0; j < f; ++j) s += w[j] * row[j];
        const double p = 1.0 / (1.0 + std::exp(-s));
        const double err = p - (train_labels[order[i]] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < f; ++j) grad_w[j] += err * row[j];
        grad_b += err;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t j = 0; j < f; ++j) {
        w[j] -= cfg.learning_rate * (grad_w[j] * inv + 2.0 * cfg.l2 * w[j]);
      }
      bias -= cfg.learning_rate * grad_b * inv;
    }
  }

  const auto test = gather_rows(data.features, f, data.test_idx);
  const auto test_labels = gather_labels(data.labels, data.test_idx);
  std::vector<std::uint8_t> pred(test_labels.size());
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const float* row = test.data() + t * f;
    double s = bias;
    for (std::size_t j = 0; j < f; ++j) s += w[j] * row[j];
    pred[t] = s > 0.0 ? 1 : 0;  // sigmoid(s) > 0.5
  }
  return f1_score(pred, test_labels);
}

namespace {

struct GbtNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double weight = 0.0;
  bool leaf = false;
};

struct SplitStats {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool found = false;
};

}  // namespace

double gbt_probe(const ProbeDataset& data) { return gbt_probe(data, GbtConfig{}); }

double gbt_probe(const ProbeDataset& data, const GbtConfig& cfg) {
  if (data.train_idx.empty() || data.test_idx.empty()) {
    throw num::ParamError("gbt_probe: empty split");
  }
  const std::size_t f = data.f;
  const auto train = gather_rows(data.features, f, data.train_idx);
  const auto train_labels = gather_labels(data.labels, data.train_idx);
  const auto test = gather_rows(data.features, f, data.test_idx);
  const auto test_labels = gather_labels(data.labels, data.test_idx);
  const std::size_t n = data.train_idx.size();

  // Presorted row order per feature (value ascending, row ascending).
  std::vector<std::uint32_t> sorted(f * n);
  for (std::size_t j = 0; j < f; ++j) {
    std::uint32_t* s = sorted.data() + j * n;
    for (std::uint32_t i = 0; i < n; ++i) s[i] = i;
    std::sort(s, s + n, [&train, j, f](std::uint32_t a, std::uint32_t b) {
      const float va = train[a * f + j], vb = train[b * f + j];
      if (va != vb) return va < vb;
      return a < b;
    });
  }

  std::vector<double> logit(n, 0.0);
  std::vector<double> test_logit(test_labels.size(), 0.0);
  std::vector<double> g(n), h(n);
  std::vector<std::int32_t> node_of(n);

  for (int round = 0; round < cfg.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-logit[i]));
      g[i] = p - (train_labels[i] ? 1.0 : 0.0);
      h[i] = p * (1.0 - p);
    }

    std::vector<GbtNode> nodes(1);
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<int> active{0};
    std::vector<double> node_g{0.0}, node_h{0.0};
    {
      double G = 0.0, H = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        G += g[i];
        H += h[i];
      }
      node_g[0] = G;
      node_h[0] = H;
    }

    for (int depth = 0; depth < cfg.max_depth && !active.empty(); ++depth) {
      // Exact greedy: one pass over each feature's presorted rows,
      // accumulating left-side stats per active node.
      std::vector<SplitStats> best(nodes.size());
      std::vector<double> gl(nodes.size()), hl(nodes.size());
      std::vector<double> prev_value(nodes.size());
      std::vector<std::uint32_t> count_left(nodes.size());
      std::vector<char> is_active(nodes.size(), 0);
      for (int a : active) is_active[a] = 1;

      for (std::size_t j = 0; j < f; ++j) {
        for (int a : active) {
          gl[a] = 0.0;
          hl[a] = 0.0;
          count_left[a] = 0;
        }
        const std::uint32_t* s = sorted.data() + j * n;
        for (std::size_t r = 0; r < n; ++r) {
          const std::uint32_t row = s[r];
          const int a = node_of[row];
          if (a < 0 || !is_active[a]) continue;
          const double value = train[row * f + j];
          if (count_left[a] > 0 && value > prev_value[a]) {
            const double GL = gl[a], HL = hl[a];
            const double GR = node_g[a] - GL, HR = node_h[a] - HL;
            const double gain = 0.5 * (GL * GL / (HL + cfg.lambda) +
                                       GR * GR / (HR + cfg.lambda) -
                                       node_g[a] * node_g[a] / (node_h[a] + cfg.lambda));
            // Strictly-greater replacement with ascending scan order keeps
            // the lowest feature index and threshold on ties.
            if (gain > best[a].gain) {
              best[a].gain = gain;
              best[a].feature = static_cast<int>(j);
              best[a].threshold = 0.5 * (prev_value[a] + value);
              best[a].found = true;
            }
          }
          gl[a] += g[row];
          hl[a] += h[row];
          count_left[a] += 1;
          prev_value[a] = value;
        }
      }

      std::vector<int> next_active;
      for (int a : active) {
        if (!best[a].found || best[a].gain <= 0.0) {
          nodes[a].leaf = true;
          nodes[a].weight = -node_g[a] / (node_h[a] + cfg.lambda);
          continue;
        }
        nodes[a].feature = best[a].feature;
        nodes[a].threshold = best[a].threshold;
        const int li = static_cast<int>(nodes.size());
        nodes.push_back({});
        const int ri = static_cast<int>(nodes.size());
        nodes.push_back({});
        nodes[a].left = li;
        nodes[a].right = ri;
        node_g.resize(nodes.size(), 0.0);
        node_h.resize(nodes.size(), 0.0);
        next_active.push_back(li);
        next_active.push_back(ri);
      }

      // Route rows to children and accumulate child stats.
      for (std::size_t i = 0; i < n; ++i) {
        const int a = node_of[i];
        if (a < 0 || nodes[a].leaf || nodes[a].left < 0) continue;
        const double value = train[i * f + nodes[a].feature];
        const int child = value < nodes[a].threshold ? nodes[a].left : nodes[a].right;
        node_of[i] = child;
        node_g[child] += g[i];
        node_h[child] += h[i];
      }
      active = std::move(next_active);
    }
    // Any still-active nodes at max depth become leaves.
    for (int a : active) {
      nodes[a].leaf = true;
      nodes[a].weight = -node_g[a] / (node_h[a] + cfg.lambda);
    }

    for (std::size_t i = 0; i < n; ++i) {
      const int a = node_of[i];
      logit[i] += cfg.learning_rate * nodes[a].weight;
    }
    for (std::size_t t = 0; t < test_logit.size(); ++t) {
      int a = 0;
      while (!nodes[a].leaf && nodes[a].left >= 0) {
        const double value = test[t * f + nodes[a].feature];
        a = value < nodes[a].threshold ? nodes[a].left : nodes[a].right;
      }
      test_logit[t] += cfg.learning_rate * nodes[a].weight;
    }
  }

  std::vector<std::uint8_t> pred(test_labels.size());
  for (std::size_t t = 0; t < pred.size(); ++t) pred[t] = test_logit[t] > 0.0 ? 1 : 0;
  return f1_score(pred, test_labels);
}

namespace {

// reconstruction-from-masked-latents features for one representation
std::vector<float> reconstruction_features(const Representation& rep,
                                           const TruncationSelection& sel, std::size_t n) {
  const auto& z = *rep.full;
  const std::size_t nl = rep.f_full;
  const auto wd = rep.sae_model->w_dec().values();
  const auto bd = rep.sae_model->b_dec().values();
  constexpr std::size_t kDim = 256;

  std::vector<char> keep(nl, 0);
  for (auto j : sel.selected) keep[j] = 1;

  std::vector<float> out(n * kDim);
  for (std::size_t i = 0; i < n; ++i) {
    float* row = out.data() + i * kDim;
    for (std::size_t d = 0; d < kDim; ++d) row[d] = bd[d];
    const float* zr = z.data() + i * nl;
    for (std::size_t j = 0; j < nl; ++j) {
      const float v = zr[j];
      if (v == 0.0f || !keep[j]) continue;
      for (std::size_t d = 0; d < kDim; ++d) row[d] += v * wd[d * nl + j];
    }
    if (rep.transform) {
      const int p = (*rep.inferred_powers)[i];
      const auto mv = rep.transform->m.values();
      std::array<float, kDim> cur;
      std::copy_n(row, kDim, cur.begin());
      for (int step = 0; step < p; ++step) {
        std::array<float, kDim> next;
        for (std::size_t r = 0; r < kDim; ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < kDim; ++c) {
            acc += static_cast<double>(mv[r * kDim + c]) * cur[c];
          }
          next[r] = static_cast<float>(acc);
        }
        cur = next;
      }
      std::copy_n(cur.begin(), kDim, row);
    }
  }
  return out;
}

}  // namespace

SuiteResult run_task_suite(const std::vector<Representation>& representations,
                           const std::vector<data::LabeledImage>& images,
                           const std::vector<data::TaskSpec>& tasks,
                           const SuiteConfig& config) {
  const std::size_t n = images.size();
  const std::size_t n_tasks = tasks.size();
  const std::size_t n_reps = representations.size();

  // Per-task labels once.
  std::vector<std::vector<std::uint8_t>> labels(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    labels[t].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[t][i] = data::task_label(images[i], tasks[t]) ? 1 : 0;
    }
  }

  const std::array<const char*, 3> probe_names{"knn", "logreg", "gbt"};
  std::vector<std::vector<ProbeResult>> per_task(n_tasks);
  std::vector<std::string> task_errors(n_tasks);

  parallel_for(n_tasks, [&](std::size_t t0, std::size_t t1) {
    for (std::size_t t = t0; t < t1; ++t) {
      const auto& task = tasks[t];
      try {
        std::vector<std::uint32_t> train_idx, test_idx;
        stratified_split(labels[t], config.train_frac,
                         derive_seed(config.seed, "probe_split", task.name()), train_idx,
                         test_idx);

        for (std::size_t r = 0; r < n_reps; ++r) {
          const auto& rep = representations[r];
          ProbeDataset ds;
          ds.n = n;
          ds.labels = labels[t];
          ds.train_idx = train_idx;
          ds.test_idx = test_idx;

          int trunc_len = 0;
          if (rep.kind == Representation::Kind::activations) {
            ds.f = rep.f_full;
            ds.features = *rep.full;
          } else {
            trunc_len = config.trunc_len;
            auto train_latents = gather_rows(*rep.full, rep.f_full, train_idx);
            auto train_labels = gather_labels(labels[t], train_idx);
            auto sel = select_top_latents(train_latents.data(), train_idx.size(),
                                          rep.f_full, train_labels, config.trunc_len);
            if (rep.kind == Representation::Kind::latents) {
              ds.f = sel.selected.size();
              ds.features.resize(n * ds.f);
              for (std::size_t i = 0; i < n; ++i) {
                const float* zr = rep.full->data() + i * rep.f_full;
                for (std::size_t j = 0; j < ds.f; ++j) {
                  ds.features[i * ds.f + j] = zr[sel.selected[j]];
                }
              }
            } else {
              ds.f = 256;
              ds.features = reconstruction_features(rep, sel, n);
            }
          }

          double f1s[3];
          f1s[0] = knn_probe(ds);
          f1s[1] = logreg_probe(ds, derive_seed(config.seed, "logreg", task.name(), r));
          f1s[2] = gbt_probe(ds);
          int best = 0;
          for (int p = 1; p < 3; ++p) {
            if (f1s[p] > f1s[best]) best = p;
          }
          for (int p = 0; p < 3; ++p) {
            ProbeResult row;
            row.task = task.name();
            row.family = task.family;
            row.shape = task.shape;
            row.position = task.position.value_or(-1);
            row.orientation = task.orientation.value_or(-1);
            row.representation = rep.name;
            row.sae_variant = rep.sae_variant;
            row.k = rep.k;
            row.trunc_len = trunc_len;
            row.probe = probe_names[p];
            row.f1 = f1s[p];
            row.best = (p == best);
            per_task[t].push_back(std::move(row));
          }
        }
      } catch (const std::exception& e) {
        task_errors[t] = e.what();
        per_task[t].clear();
      }
    }
  });

  SuiteResult out;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    if (!task_errors[t].empty()) {
      std::cerr << "probe task " << tasks[t].name() << " failed: " << task_errors[t]
                << "\n";
      continue;
    }
    out.rows.insert(out.rows.end(), per_task[t].begin(), per_task[t].end());
  }

  // Aggregate mean best-probe F1 per family and overall, per representation.
  std::map<std::string, std::array<double, 4>> family_sum;
  std::map<std::string, std::array<int, 4>> family_count;
  std::map<std::string, double> total_sum;
  std::map<std::string, int> total_count;
  for (const auto& row : out.rows) {
    if (!row.best) continue;
    const int fam = static_cast<int>(row.family);
    family_sum[row.representation][fam] += row.f1;
    family_count[row.representation][fam] += 1;
    total_sum[row.representation] += row.f1;
    total_count[row.representation] += 1;
  }
  for (auto& [rep, sums] : family_sum) {
    std::array<double, 4> means{};
    for (int fam = 0; fam < 4; ++fam) {
      means[fam] = family_count[rep][fam] ? sums[fam] / family_count[rep][fam] : 0.0;
    }
    out.family_mean_best[rep] = means;
    out.overall_mean_best[rep] = total_sum[rep] / total_count[rep];
  }
  return out;
}

}  // namespace eqsae::probe

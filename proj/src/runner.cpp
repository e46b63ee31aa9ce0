#include "eqsae/runner.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

#include "eqsae/base_models.hpp"
#include "eqsae/dataset.hpp"
#include "eqsae/equivariance.hpp"
#include "eqsae/parallel.hpp"
#include "eqsae/probing.hpp"
#include "eqsae/report.hpp"
#include "eqsae/rng.hpp"
#include "eqsae/sae.hpp"
#include "eqsae/tensor_io.hpp"

namespace eqsae::run {

namespace fs = std::filesystem;
using nlohmann::json;

std::string Paths::base_dir(const std::string& kind) const { return root + "/base_" + kind; }
std::string Paths::m_path(const std::string& kind) const {
  return root + "/m_" + kind + ".etns";
}
std::string Paths::m_report_path(const std::string& kind) const {
  return root + "/m_" + kind + "_report.json";
}
std::string Paths::sae_dir(const std::string& variant, int k) const {
  return root + "/sae_" + variant + "_k" + std::to_string(k);
}
std::string Paths::sae_history_path(const std::string& variant, int k) const {
  return sae_dir(variant, k) + "/history.csv";
}

Paths artifact_paths(const RunConfig& config) {
  Paths p;
  p.root = config.output_dir;
  p.train_prefix = config.output_dir + "/data/train";
  p.probe_prefix = config.output_dir + "/data/probe";
  p.eval_prefix = config.output_dir + "/data/eval";
  p.probe_csv = config.output_dir + "/probe/probe_results.csv";
  p.report_dir = config.output_dir + "/report";
  return p;
}

RunConfig desk_config(std::uint64_t seed, const std::string& output_dir) {
  RunConfig c;
  c.seed = seed;
  c.scale = "desk";
  c.output_dir = output_dir;
  c.n_train = 2000;
  c.n_probe = 1024;
  c.n_eval = 256;
  c.base_epochs = 24;
  c.sae_epochs = 100;
  c.m_epochs = 150;
  // Reduced CI grid: both objective-relevant variants across all K, the two
  // remaining baselines at the probing K.
  c.sae_grid = {{"regular", 8},  {"regular", 16},   {"regular", 32},
                {"invariant", 8}, {"invariant", 16}, {"invariant", 32},
                {"wide", 16},     {"two_layer", 16}};
  c.trunc_lengths = {32};
  c.probe_k = 16;
  return c;
}

RunConfig paper_config(std::uint64_t seed, const std::string& output_dir) {
  RunConfig c;
  c.seed = seed;
  c.scale = "paper";
  c.output_dir = output_dir;
  c.n_train = 10000;
  c.n_probe = 1024;
  c.n_eval = 256;
  c.base_epochs = 100;
  c.sae_epochs = 500;
  c.m_epochs = 150;
  c.sae_grid.clear();
  for (const char* variant : {"regular", "wide", "two_layer", "invariant"}) {
    for (int k : {8, 16, 32}) c.sae_grid.push_back({variant, k});
  }
  c.trunc_lengths = {8, 32};
  c.probe_k = 16;
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot read " + path);
  json j = json::parse(in);

  static const std::vector<std::string> known = {
      "version",     "seed",       "scale",          "base_kinds",
      "sae_base",    "sae_grid",   "trunc_lengths",  "probe_k",
      "probe_variants", "output_dir", "n_train",     "n_probe",
      "n_eval",      "base_epochs", "sae_epochs",    "m_epochs",
      "stage_parallelism"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw std::runtime_error("config: unknown key \"" + it.key() + "\"");
    }
  }
  if (j.value("version", 1) != 1) throw std::runtime_error("config: unsupported version");

  const std::string scale = j.value("scale", std::string("desk"));
  RunConfig c = scale == "paper" ? paper_config(j.value("seed", 1ull), "runs/paper")
                                 : desk_config(j.value("seed", 1ull), "runs/desk");
  if (scale != "desk" && scale != "paper") {
    throw std::runtime_error("config: scale must be desk or paper");
  }

  // Scale presets pin the sample and epoch budgets.
  for (const char* pinned : {"n_train", "sae_epochs"}) {
    if (j.contains(pinned)) {
      throw std::runtime_error(std::string("config: \"") + pinned +
                               "\" is pinned by the scale preset and cannot be overridden");
    }
  }
  if (scale == "paper") {
    for (const char* pinned : {"base_epochs", "m_epochs"}) {
      if (j.contains(pinned)) {
        throw std::runtime_error(std::string("config: \"") + pinned +
                                 "\" is pinned at paper scale");
      }
    }
  }

  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("base_kinds")) c.base_kinds = j["base_kinds"].get<std::vector<std::string>>();
  if (j.contains("sae_base")) c.sae_base = j["sae_base"].get<std::string>();
  if (j.contains("trunc_lengths")) c.trunc_lengths = j["trunc_lengths"].get<std::vector<int>>();
  if (j.contains("probe_k")) c.probe_k = j["probe_k"].get<int>();
  if (j.contains("probe_variants")) {
    c.probe_variants = j["probe_variants"].get<std::vector<std::string>>();
  }
  if (j.contains("n_probe")) c.n_probe = j["n_probe"].get<int>();
  if (j.contains("n_eval")) c.n_eval = j["n_eval"].get<int>();
  if (j.contains("base_epochs")) c.base_epochs = j["base_epochs"].get<int>();
  if (j.contains("m_epochs")) c.m_epochs = j["m_epochs"].get<int>();
  if (j.contains("stage_parallelism")) c.stage_parallelism = j["stage_parallelism"].get<int>();
  if (j.contains("sae_grid")) {
    c.sae_grid.clear();
    for (const auto& job : j["sae_grid"]) {
      c.sae_grid.push_back({job.at("variant").get<std::string>(), job.at("k").get<int>()});
    }
  }

  for (const auto& kind : c.base_kinds) base::kind_from_name(kind);  // validate
  for (const auto& job : c.sae_grid) sae::variant_from_name(job.variant);
  for (const auto& v : c.probe_variants) sae::variant_from_name(v);
  base::kind_from_name(c.sae_base);
  return c;
}

namespace {

json config_json(const RunConfig& c) {
  json grid = json::array();
  for (const auto& job : c.sae_grid) grid.push_back({{"variant", job.variant}, {"k", job.k}});
  return json{{"version", 1},
              {"seed", c.seed},
              {"scale", c.scale},
              {"base_kinds", c.base_kinds},
              {"sae_base", c.sae_base},
              {"sae_grid", grid},
              {"trunc_lengths", c.trunc_lengths},
              {"probe_k", c.probe_k},
              {"probe_variants", c.probe_variants},
              {"n_train", c.n_train},
              {"n_probe", c.n_probe},
              {"n_eval", c.n_eval},
              {"base_epochs", c.base_epochs},
              {"sae_epochs", c.sae_epochs},
              {"m_epochs", c.m_epochs}};
}

std::string hex_key(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t chain(std::uint64_t h, const std::string& part) {
  return derive_seed(h, part);
}

struct Manifest {
  std::string path;
  json j;

  static Manifest open(const RunConfig& config) {
    Manifest m;
    m.path = config.output_dir + "/manifest.json";
    if (fs::exists(m.path)) {
      std::ifstream in(m.path);
      m.j = json::parse(in);
    } else {
      m.j = json{{"version", 1}, {"stages", json::object()}};
    }
    m.j["config"] = config_json(config);
    return m;
  }

  bool cached(const std::string& stage, const std::string& key,
              const std::vector<std::string>& artifacts) const {
    const auto& stages = j.at("stages");
    if (!stages.contains(stage)) return false;
    if (stages.at(stage).value("key", std::string()) != key) return false;
    for (const auto& a : artifacts) {
      if (!fs::exists(a)) return false;
    }
    return true;
  }

  void record(const std::string& stage, const std::string& key,
              const std::vector<std::string>& artifacts, double wall_s, bool cache_hit) {
    json& s = j["stages"][stage];
    s["key"] = key;
    s["artifacts"] = artifacts;
    if (!cache_hit) {
      s["wall_s"] = wall_s;
      s["cache_hits"] = 0;
    } else {
      s["cache_hits"] = s.value("cache_hits", 0) + 1;
    }
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    out << j.dump(1) << "\n";
  }
};

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void require_artifact(const std::string& path, const std::string& stage,
                      const std::string& producer) {
  if (!fs::exists(path)) {
    throw std::runtime_error(stage + ": missing artifact " + path + " (run the " + producer +
                             " stage first)");
  }
}

void apply_parallelism(const RunConfig& config) {
  if (config.stage_parallelism > 0) set_worker_count(config.stage_parallelism);
}

// ---- dataset views -------------------------------------------------------

std::vector<data::LabeledImage> expand_orbits(const std::vector<data::LabeledImage>& canon) {
  std::vector<data::LabeledImage> out;
  out.reserve(canon.size() * 4);
  for (const auto& img : canon) {
    for (int p = 0; p < 4; ++p) {
      data::LabeledImage rotated;
      rotated.pixels = data::rotate_image(img.pixels, p);
      rotated.spec = data::rotate_spec(img.spec, p);
      rotated.spec.power = p;
      out.push_back(std::move(rotated));
    }
  }
  return out;
}

std::vector<data::LabeledImage> randomly_rotated(const std::vector<data::LabeledImage>& canon,
                                                 std::uint64_t seed) {
  std::vector<data::LabeledImage> out;
  out.reserve(canon.size());
  for (std::size_t i = 0; i < canon.size(); ++i) {
    Rng rng(derive_seed(seed, "rot", "", i));
    const int p = static_cast<int>(rng.next_below(4));
    data::LabeledImage rotated;
    rotated.pixels = data::rotate_image(canon[i].pixels, p);
    rotated.spec = data::rotate_spec(canon[i].spec, p);
    rotated.spec.power = p;
    out.push_back(std::move(rotated));
  }
  return out;
}

// ---- stage keys -----------------------------------------------------------

std::string gen_key(const RunConfig& c) {
  std::uint64_t h = derive_seed(c.seed, "gen_data");
  h = chain(h, std::to_string(c.n_train) + "/" + std::to_string(c.n_probe) + "/" +
                   std::to_string(c.n_eval));
  return hex_key(h);
}

std::string base_key(const RunConfig& c, const std::string& kind) {
  std::uint64_t h = derive_seed(c.seed, "train_base", kind);
  h = chain(h, gen_key(c));
  h = chain(h, std::to_string(c.base_epochs));
  return hex_key(h);
}

std::string fit_m_key(const RunConfig& c, const std::string& kind) {
  std::uint64_t h = derive_seed(c.seed, "fit_m", kind);
  h = chain(h, base_key(c, kind));
  h = chain(h, std::to_string(c.m_epochs));
  return hex_key(h);
}

std::string sae_key(const RunConfig& c, const SaeJob& job) {
  std::uint64_t h = derive_seed(c.seed, "train_sae", job.variant,
                                static_cast<std::uint64_t>(job.k));
  h = chain(h, base_key(c, c.sae_base));
  h = chain(h, std::to_string(c.sae_epochs));
  return hex_key(h);
}

std::string probe_key(const RunConfig& c) {
  std::uint64_t h = derive_seed(c.seed, "probe");
  h = chain(h, base_key(c, c.sae_base));
  h = chain(h, fit_m_key(c, c.sae_base));
  for (const auto& v : c.probe_variants) {
    h = chain(h, sae_key(c, {v, c.probe_k}));
  }
  for (int L : c.trunc_lengths) h = chain(h, std::to_string(L));
  return hex_key(h);
}

std::string report_key(const RunConfig& c) {
  std::uint64_t h = derive_seed(c.seed, "report");
  h = chain(h, probe_key(c));
  for (const auto& job : c.sae_grid) h = chain(h, sae_key(c, job));
  for (const auto& kind : c.base_kinds) h = chain(h, fit_m_key(c, kind));
  return hex_key(h);
}

void write_history_csv(const std::string& path, const std::vector<double>& losses) {
  report::Table t;
  t.header = {"epoch", "loss"};
  for (std::size_t e = 0; e < losses.size(); ++e) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9e", losses[e]);
    t.rows.push_back({std::to_string(e), buf});
  }
  report::write_csv(path, t);
}

}  // namespace

void cmd_gen_data(const RunConfig& config) {
  apply_parallelism(config);
  auto paths = artifact_paths(config);
  auto manifest = Manifest::open(config);
  const std::string key = gen_key(config);
  const std::vector<std::string> artifacts = {
      paths.train_prefix + ".etns", paths.train_prefix + ".json",
      paths.probe_prefix + ".etns", paths.probe_prefix + ".json",
      paths.eval_prefix + ".etns",  paths.eval_prefix + ".json"};
  if (manifest.cached("gen_data", key, artifacts)) {
    std::cout << "gen-data: cache hit\n";
    manifest.record("gen_data", key, artifacts, 0.0, true);
    return;
  }
  StageTimer timer;
  fs::create_directories(config.output_dir + "/data");
  data::save_dataset(paths.train_prefix,
                     data::generate_dataset(config.n_train,
                                            derive_seed(config.seed, "data", "train"),
                                            data::Augment::none));
  data::save_dataset(paths.probe_prefix,
                     data::generate_dataset(config.n_probe,
                                            derive_seed(config.seed, "data", "probe"),
                                            data::Augment::none));
  data::save_dataset(paths.eval_prefix,
                     data::generate_dataset(config.n_eval,
                                            derive_seed(config.seed, "data", "eval"),
                                            data::Augment::none));
  manifest.record("gen_data", key, artifacts, timer.seconds(), false);
  std::cout << "gen-data: wrote " << config.n_train << "+" << config.n_probe << "+"
            << config.n_eval << " canonical images\n";
}

void cmd_train_base(const RunConfig& config) {
  apply_parallelism(config);
  auto paths = artifact_paths(config);
  auto manifest = Manifest::open(config);
  require_artifact(paths.train_prefix + ".etns", "train-base", "gen-data");
  for (const auto& kind_name : config.base_kinds) {
    const std::string key = base_key(config, kind_name);
    const std::string dir = paths.base_dir(kind_name);
    const std::vector<std::string> artifacts = {dir + "/manifest.json",
                                                dir + "/loss_history.csv"};
    const std::string stage = "train_base:" + kind_name;
    if (manifest.cached(stage, key, artifacts)) {
      std::cout << "train-base[" << kind_name << "]: cache hit\n";
      manifest.record(stage, key, artifacts, 0.0, true);
      continue;
    }
    StageTimer timer;
    auto canon = data::load_dataset(paths.train_prefix);
    auto images = randomly_rotated(canon, derive_seed(config.seed, "data", "train_rot"));
    auto model = base::build_base(base::kind_from_name(kind_name),
                                  derive_seed(config.seed, "base_build", kind_name));
    base::BaseTrainConfig tc;
    tc.epochs = config.base_epochs;
    tc.n_samples = config.n_train;
    tc.batch_size = 64;
    tc.learning_rate = 1e-3f;
    tc.seed = derive_seed(config.seed, "base_train", kind_name);
    auto history = base::train_base(model, images, tc);
    base::save_base(dir, model);
    write_history_csv(dir + "/loss_history.csv", history.epoch_loss);
    manifest.record(stage, key, artifacts, timer.seconds(), false);
    std::cout << "train-base[" << kind_name << "]: final loss "
              << history.epoch_loss.back() << " in " << timer.seconds() << "s\n";
  }
}

void cmd_fit_m(const RunConfig& config) {
  apply_parallelism(config);
  auto paths = artifact_paths(config);
  auto manifest = Manifest::open(config);
  for (const auto& kind_name : config.base_kinds) {
    const std::string key = fit_m_key(config, kind_name);
    const std::vector<std::string> artifacts = {paths.m_path(kind_name),
                                                paths.m_report_path(kind_name)};
    const std::string stage = "fit_m:" + kind_name;
    if (manifest.cached(stage, key, artifacts)) {
      std::cout << "fit-m[" << kind_name << "]: cache hit\n";
      manifest.record(stage, key, artifacts, 0.0, true);
      continue;
    }
    require_artifact(paths.base_dir(kind_name) + "/manifest.json", "fit-m", "train-base");
    require_artifact(paths.eval_prefix + ".etns", "fit-m", "gen-data");
    StageTimer timer;
    auto model = base::load_base(paths.base_dir(kind_name));
    auto train_orbits = expand_orbits(data::load_dataset(paths.train_prefix));
    auto eval_orbits = expand_orbits(data::load_dataset(paths.eval_prefix));
    auto train_acts = base::middle_activations(model, train_orbits);
    auto eval_acts = base::middle_activations(model, eval_orbits);

    equi::FitMConfig fc;
    fc.epochs = config.m_epochs;
    fc.batch_size = 64;
    fc.learning_rate = 1e-3f;
    fc.seed = derive_seed(config.seed, "fit_m", kind_name);
    equi::FitReport rep;
    auto m = equi::fit_m(train_acts, eval_acts, fc, &rep);
    equi::save_transform(paths.m_path(kind_name), m);

    json jr;
    jr["kind"] = kind_name;
    jr["epochs"] = rep.epochs;
    jr["r2_per_power"] = rep.r2_per_power;
    jr["r2_mean"] = rep.r2_mean;
    jr["r2_std"] = rep.r2_std;
    jr["identity_r2_per_power"] = rep.identity_r2_per_power;
    jr["identity_baseline_r2"] = rep.identity_baseline_r2;
    jr["final_loss"] = rep.loss_history.back();
    jr["first_loss"] = rep.loss_history.front();
    std::ofstream out(paths.m_report_path(kind_name));
    out << jr.dump(1) << "\n";

    manifest.record(stage, key, artifacts, timer.seconds(), false);
    std::cout << "fit-m[" << kind_name << "]: r2_mean " << rep.r2_mean << " (identity "
              << rep.identity_baseline_r2 << ") in " << timer.seconds() << "s\n";
  }
}

void cmd_train_sae(const RunConfig& config) {
  apply_parallelism(config);
  auto paths = artifact_paths(config);
  auto manifest = Manifest::open(config);

  bool acts_ready = false;
  num::Tensor<float> acts;

  for (const auto& job : config.sae_grid) {
    const std::string key = sae_key(config, job);
    const std::string dir = paths.sae_dir(job.variant, job.k);
    const std::vector<std::string> artifacts = {dir + "/manifest.json", dir + "/history.csv"};
    const std::string stage = "train_sae:" + job.variant + ":k" + std::to_string(job.k);
    if (manifest.cached(stage, key, artifacts)) {
      std::cout << "train-sae[" << job.variant << ",k=" << job.k << "]: cache hit\n";
      manifest.record(stage, key, artifacts, 0.0, true);
      continue;
    }
    require_artifact(paths.base_dir(config.sae_base) + "/manifest.json", "train-sae",
                     "train-base");
    StageTimer timer;
    if (!acts_ready) {
      auto model = base::load_base(paths.base_dir(config.sae_base));
      auto orbits = expand_orbits(data::load_dataset(paths.train_prefix));
      acts = base::middle_activations(model, orbits);
      acts_ready = true;
    }
    auto model = sae::build_sae(sae::variant_from_name(job.variant), job.k,
                                derive_seed(config.seed, "sae_build", job.variant,
                                            static_cast<std::uint64_t>(job.k)));
    sae::SaeTrainConfig sc;
    sc.epochs = config.sae_epochs;
    sc.n_samples = config.n_train;
    sc.batch_size = 64;
    sc.learning_rate = 1e-3f;
    sc.seed = derive_seed(config.seed, "sae_train", job.variant,
                          static_cast<std::uint64_t>(job.k));
    const auto mode = sae::variant_from_name(job.variant) == sae::Variant::invariant
                          ? sae::TrainMode::invariance
                          : sae::TrainMode::reconstruction;
    auto history = sae::train_sae_on_activations(model, acts, mode, sc);
    sae::save_sae(dir, model);
    write_history_csv(dir + "/history.csv", history.epoch_loss);
    manifest.record(stage, key, artifacts, timer.seconds(), false);
    std::cout << "train-sae[" << job.variant << ",k=" << job.k << "]: final loss "
              << history.epoch_loss.back() << " in " << timer.seconds() << "s\n";
  }
}

void cmd_probe(const RunConfig& config) {
  apply_parallelism(config);
  auto paths = artifact_paths(config);
  auto manifest = Manifest::open(config);
  const std::string key = probe_key(config);
  const std::vector<std::string> artifacts = {paths.probe_csv};
  if (manifest.cached("probe", key, artifacts)) {
    std::cout << "probe: cache hit\n";
    manifest.record("probe", key, artifacts, 0.0, true);
    return;
  }
  require_artifact(paths.base_dir(config.sae_base) + "/manifest.json", "probe", "train-base");
  require_artifact(paths.m_path(config.sae_base), "probe", "fit-m");
  for (const auto& v : config.probe_variants) {
    require_artifact(paths.sae_dir(v, config.probe_k) + "/manifest.json", "probe",
                     "train-sae");
  }
  StageTimer timer;

  auto model = base::load_base(paths.base_dir(config.sae_base));
  auto m = equi::load_transform(paths.m_path(config.sae_base));
  auto images = expand_orbits(data::load_dataset(paths.probe_prefix));
  auto acts_tensor = base::middle_activations(model, images);
  std::vector<float> acts(acts_tensor.values().begin(), acts_tensor.values().end());

  struct VariantData {
    sae::SaeModel model;
    std::vector<float> z;
    std::vector<int> powers;
    bool equivariant = false;
  };
  std::vector<VariantData> variants(config.probe_variants.size());
  for (std::size_t v = 0; v < config.probe_variants.size(); ++v) {
    auto& vd = variants[v];
    vd.model = sae::load_sae(paths.sae_dir(config.probe_variants[v], config.probe_k));
    auto z = sae::encode(vd.model, acts_tensor);
    vd.z.assign(z.values().begin(), z.values().end());
    vd.equivariant = vd.model.variant == sae::Variant::invariant;
    if (vd.equivariant) {
      auto er = equi::equivariant_reconstruct(vd.model, m, acts_tensor);
      vd.powers = std::move(er.inferred_powers);
    }
  }

  std::vector<probe::Representation> reps;
  {
    probe::Representation r;
    r.name = "activations";
    r.kind = probe::Representation::Kind::activations;
    r.full = &acts;
    r.f_full = 256;
    reps.push_back(r);
  }
  for (std::size_t v = 0; v < config.probe_variants.size(); ++v) {
    const auto& vd = variants[v];
    const std::string label = vd.equivariant ? "equivariant" : config.probe_variants[v];
    probe::Representation lat;
    lat.name = "latents:" + label;
    lat.sae_variant = label;
    lat.k = config.probe_k;
    lat.kind = probe::Representation::Kind::latents;
    lat.full = &vd.z;
    lat.f_full = static_cast<std::size_t>(vd.model.n_latents);
    reps.push_back(lat);

    probe::Representation rec = lat;
    rec.name = "recon:" + label;
    rec.kind = probe::Representation::Kind::reconstruction;
    rec.sae_model = &vd.model;
    if (vd.equivariant) {
      rec.transform = &m;
      rec.inferred_powers = &vd.powers;
    }
    reps.push_back(rec);
  }

  auto tasks = data::enumerate_tasks();
  report::Table table;
  table.header = {"task_family", "shape",       "position", "orientation",
                  "representation", "sae_variant", "k",        "trunc_len",
                  "probe",       "f1",          "best_flag", "seed"};
  for (int L : config.trunc_lengths) {
    probe::SuiteConfig sc;
    sc.trunc_len = L;
    sc.train_frac = 0.75;
    sc.seed = derive_seed(config.seed, "probe_suite", "", static_cast<std::uint64_t>(L));
    auto result = probe::run_task_suite(reps, images, tasks, sc);
    for (const auto& row : result.rows) {
      table.rows.push_back({data::family_name(row.family), std::to_string(row.shape),
                            std::to_string(row.position), std::to_string(row.orientation),
                            row.representation, row.sae_variant, std::to_string(row.k),
                            std::to_string(row.trunc_len), row.probe,
                            report::format_double(row.f1), row.best ? "1" : "0",
                            std::to_string(config.seed)});
    }
  }
  fs::create_directories(config.output_dir + "/probe");
  report::write_csv(paths.probe_csv, table);
  manifest.record("probe", key, artifacts, timer.seconds(), false);
  std::cout << "probe: " << table.rows.size() << " rows in " << timer.seconds() << "s\n";
}

void cmd_report(const RunConfig& config) {
  apply_parallelism(config);
  auto paths = artifact_paths(config);
  auto manifest = Manifest::open(config);
  const std::string key = report_key(config);
  std::vector<std::string> artifacts = {
      paths.report_dir + "/frontier.csv", paths.report_dir + "/frontier.svg",
      paths.report_dir + "/mfit_report.csv", paths.report_dir + "/dict_features.csv",
      paths.report_dir + "/dict_features_hist.svg"};
  for (int L : config.trunc_lengths) {
    artifacts.push_back(paths.report_dir + "/family_f1_trunc" + std::to_string(L) + "_k" +
                        std::to_string(config.probe_k) + ".csv");
    artifacts.push_back(paths.report_dir + "/family_f1_trunc" + std::to_string(L) + "_k" +
                        std::to_string(config.probe_k) + ".svg");
  }
  if (manifest.cached("report", key, artifacts)) {
    std::cout << "report: cache hit\n";
    manifest.record("report", key, artifacts, 0.0, true);
    return;
  }
  require_artifact(paths.probe_csv, "report", "probe");
  StageTimer timer;
  fs::create_directories(paths.report_dir);

  // (a) family x representation mean best-probe F1, per truncation length.
  auto probe_table = report::read_csv(paths.probe_csv);
  const std::vector<std::string> families = {"S", "SP", "SO", "SPO"};
  for (int L : config.trunc_lengths) {
    std::vector<std::string> rep_names;
    std::map<std::string, std::array<double, 4>> sums;
    std::map<std::string, std::array<int, 4>> counts;
    for (const auto& row : probe_table.rows) {
      if (row[10] != "1") continue;
      const int trunc = std::stoi(row[7]);
      if (trunc != 0 && trunc != L) continue;
      const std::string& rep = row[4];
      if (std::find(rep_names.begin(), rep_names.end(), rep) == rep_names.end()) {
        rep_names.push_back(rep);
      }
      const auto fam = std::distance(
          families.begin(), std::find(families.begin(), families.end(), row[0]));
      sums[rep][fam] += std::stod(row[9]);
      counts[rep][fam] += 1;
    }
    report::Table t;
    t.header = {"family"};
    for (const auto& r : rep_names) t.header.push_back(r);
    std::vector<std::vector<double>> values(families.size(),
                                            std::vector<double>(rep_names.size(), 0.0));
    for (std::size_t f = 0; f < families.size(); ++f) {
      std::vector<std::string> row{families[f]};
      for (std::size_t r = 0; r < rep_names.size(); ++r) {
        const double mean =
            counts[rep_names[r]][f] ? sums[rep_names[r]][f] / counts[rep_names[r]][f] : 0.0;
        values[f][r] = mean;
        row.push_back(report::format_double(mean));
      }
      t.rows.push_back(std::move(row));
    }
    const std::string stem = paths.report_dir + "/family_f1_trunc" + std::to_string(L) +
                             "_k" + std::to_string(config.probe_k);
    report::write_csv(stem + ".csv", t);
    report::write_bar_chart_svg(stem + ".svg",
                                "Mean best-probe F1 by task family (truncation " +
                                    std::to_string(L) + ", K=" +
                                    std::to_string(config.probe_k) + ")",
                                families, rep_names, values);
  }

  // (b) sparsity / splice-reconstruction frontier over the SAE grid.
  {
    require_artifact(paths.m_path(config.sae_base), "report", "fit-m");
    auto model = base::load_base(paths.base_dir(config.sae_base));
    auto m = equi::load_transform(paths.m_path(config.sae_base));
    auto eval_images = expand_orbits(data::load_dataset(paths.eval_prefix));
    auto eval_acts = base::middle_activations(model, eval_images);

    report::Table t;
    t.header = {"variant", "k", "latent_l1", "splice_loss", "dead_latents"};
    std::vector<report::ScatterPoint> points;
    for (const auto& job : config.sae_grid) {
      require_artifact(paths.sae_dir(job.variant, job.k) + "/manifest.json", "report",
                       "train-sae");
      auto s = sae::load_sae(paths.sae_dir(job.variant, job.k));
      const double l1 = sae::latent_l1(s, eval_acts);
      const double splice = sae::splice_loss(model, s, eval_images, nullptr);
      const int dead = sae::count_dead_latents(s, eval_acts);
      t.rows.push_back({job.variant, std::to_string(job.k), report::format_double(l1),
                        report::format_double(splice), std::to_string(dead)});
      points.push_back({job.variant + ":k" + std::to_string(job.k), splice, l1});
      if (sae::variant_from_name(job.variant) == sae::Variant::invariant) {
        const double splice_eq = sae::splice_loss(model, s, eval_images, &m);
        t.rows.push_back({"equivariant", std::to_string(job.k), report::format_double(l1),
                          report::format_double(splice_eq), std::to_string(dead)});
        points.push_back({"equivariant:k" + std::to_string(job.k), splice_eq, l1});
      }
    }
    report::write_csv(paths.report_dir + "/frontier.csv", t);
    report::write_scatter_svg(paths.report_dir + "/frontier.svg",
                              "Latent L1 vs splice reconstruction loss", "splice loss",
                              "latent L1", points);
  }

  // (c) transform-fit table per base model, learned against identity.
  {
    report::Table t;
    t.header = {"kind", "matrix", "r2_mean", "r2_std", "r2_p1", "r2_p2", "r2_p3", "r2_p4"};
    for (const auto& kind : config.base_kinds) {
      require_artifact(paths.m_report_path(kind), "report", "fit-m");
      std::ifstream in(paths.m_report_path(kind));
      json jr = json::parse(in);
      auto row_for = [&](const std::string& label, const std::string& mean_key,
                         const std::string& per_key, const std::string& std_value) {
        std::vector<std::string> row{kind, label,
                                     report::format_double(jr.at(mean_key).get<double>()),
                                     std_value};
        for (const auto& v : jr.at(per_key)) {
          row.push_back(report::format_double(v.get<double>()));
        }
        t.rows.push_back(std::move(row));
      };
      row_for("learned", "r2_mean", "r2_per_power",
              report::format_double(jr.at("r2_std").get<double>()));
      row_for("identity", "identity_baseline_r2", "identity_r2_per_power", "-");
    }
    report::write_csv(paths.report_dir + "/mfit_report.csv", t);
  }

  // (d) dictionary-feature classification for the invariant SAE.
  {
    const bool have_invariant =
        std::find(config.probe_variants.begin(), config.probe_variants.end(),
                  "invariant") != config.probe_variants.end();
    if (have_invariant) {
      auto s = sae::load_sae(paths.sae_dir("invariant", config.probe_k));
      auto m = equi::load_transform(paths.m_path(config.sae_base));
      auto fc = equi::classify_dictionary_features(s, m, 0.9);
      report::Table t;
      t.header = {"latent", "similarity", "label"};
      for (std::size_t i = 0; i < fc.labels.size(); ++i) {
        const char* label = fc.labels[i] == equi::FeatureLabel::invariant ? "invariant"
                            : fc.labels[i] == equi::FeatureLabel::equivariant
                                ? "equivariant"
                                : "dead";
        t.rows.push_back({std::to_string(i), report::format_double(fc.similarities[i]),
                          label});
      }
      report::write_csv(paths.report_dir + "/dict_features.csv", t);

      std::vector<double> edges;
      std::vector<std::size_t> counts(20, 0);
      for (int b = 0; b <= 20; ++b) edges.push_back(-1.0 + b * 0.1);
      for (std::size_t i = 0; i < fc.labels.size(); ++i) {
        if (fc.labels[i] == equi::FeatureLabel::dead) continue;
        int bin = static_cast<int>((fc.similarities[i] + 1.0) / 0.1);
        bin = std::max(0, std::min(19, bin));
        counts[static_cast<std::size_t>(bin)] += 1;
      }
      report::write_histogram_svg(paths.report_dir + "/dict_features_hist.svg",
                                  "Dictionary column cosine(D_i, M D_i)", edges, counts);
    }
  }

  manifest.record("report", key, artifacts, timer.seconds(), false);
  std::cout << "report: wrote " << paths.report_dir << " in " << timer.seconds() << "s\n";
}

void cmd_all(const RunConfig& config, bool fit_m_first) {
  cmd_gen_data(config);
  cmd_train_base(config);
  if (fit_m_first) {
    cmd_fit_m(config);
    cmd_train_sae(config);
  } else {
    cmd_train_sae(config);
    cmd_fit_m(config);
  }
  cmd_probe(config);
  cmd_report(config);
}

}  // namespace eqsae::run

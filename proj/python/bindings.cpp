#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "eqsae/base_models.hpp"
#include "eqsae/dataset.hpp"
#include "eqsae/equivariance.hpp"
#include "eqsae/optim.hpp"
#include "eqsae/probing.hpp"
#include "eqsae/runner.hpp"
#include "eqsae/sae.hpp"
#include "eqsae/tensor_io.hpp"

namespace py = pybind11;
using namespace eqsae;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

num::Tensor<float> tensor_from_array(const FloatArray& array) {
  num::Dims dims(array.ndim());
  for (py::ssize_t i = 0; i < array.ndim(); ++i) {
    dims[static_cast<std::size_t>(i)] = static_cast<std::size_t>(array.shape(i));
  }
  const float* data = array.data();
  return num::Tensor<float>::from_data(
      std::move(dims), std::vector<float>(data, data + array.size()));
}

py::array_t<float> array_from_tensor(const num::Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
  py::array_t<float> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::array_t<float> image_stack(const std::vector<data::LabeledImage>& images) {
  py::array_t<float> out({static_cast<py::ssize_t>(images.size()), py::ssize_t{64},
                          py::ssize_t{64}});
  float* dst = out.mutable_data();
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto v = images[i].pixels.values();
    std::copy(v.begin(), v.end(), dst + i * 64 * 64);
  }
  return out;
}

py::list image_specs(const std::vector<data::LabeledImage>& images) {
  py::list specs;
  for (const auto& img : images) {
    py::list quads;
    for (const auto& q : img.spec.quadrants) {
      quads.append(py::make_tuple(q.shape, q.orientation));
    }
    py::dict d;
    d["quadrants"] = quads;
    d["power"] = img.spec.power;
    specs.append(d);
  }
  return specs;
}

data::Augment augment_from_name(const std::string& name) {
  if (name == "none") return data::Augment::none;
  if (name == "all_rotations") return data::Augment::all_rotations;
  if (name == "random_rotation") return data::Augment::random_rotation;
  throw num::ParamError("unknown augment mode: " + name);
}

probe::ProbeDataset dataset_from_arrays(const FloatArray& features,
                                        const std::vector<int>& labels, double train_frac,
                                        std::uint64_t seed) {
  if (features.ndim() != 2) throw num::ShapeError("features must be [n, f]");
  probe::ProbeDataset ds;
  ds.n = static_cast<std::size_t>(features.shape(0));
  ds.f = static_cast<std::size_t>(features.shape(1));
  ds.features.assign(features.data(), features.data() + features.size());
  if (labels.size() != ds.n) throw num::ShapeError("labels must match feature rows");
  ds.labels.resize(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) ds.labels[i] = labels[i] ? 1 : 0;
  probe::stratified_split(ds.labels, train_frac, seed, ds.train_idx, ds.test_idx);
  return ds;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of the adaptively equivariant sparse autoencoder pipeline";

  // --- dataset -------------------------------------------------------------
  m.def("orientation_period", &data::orientation_period, py::arg("shape"));

  m.def(
      "render_glyph",
      [](int shape, int orientation) {
        auto raster = data::render_glyph(shape, orientation);
        py::array_t<float> out({py::ssize_t{32}, py::ssize_t{32}});
        std::copy(raster.begin(), raster.end(), out.mutable_data());
        return out;
      },
      py::arg("shape"), py::arg("orientation"));

  m.def(
      "rotate_image",
      [](const FloatArray& image, int p) {
        if (image.ndim() != 2 || image.shape(0) != 64 || image.shape(1) != 64) {
          throw num::ShapeError("rotate_image expects a 64x64 array");
        }
        const float* src = image.data();
        auto t = num::Tensor<float>::from_data({1, 64, 64},
                                               std::vector<float>(src, src + 64 * 64));
        auto rotated = data::rotate_image(t, p);
        py::array_t<float> out({py::ssize_t{64}, py::ssize_t{64}});
        std::copy(rotated.values().begin(), rotated.values().end(), out.mutable_data());
        return out;
      },
      py::arg("image"), py::arg("p"));

  m.def(
      "generate_dataset",
      [](int n_canonical, std::uint64_t seed, const std::string& augment) {
        auto images = data::generate_dataset(n_canonical, seed, augment_from_name(augment));
        return py::make_tuple(image_stack(images), image_specs(images));
      },
      py::arg("n_canonical"), py::arg("seed"), py::arg("augment") = "none",
      "Returns (images [n,64,64], specs) with post-rotation quadrant metadata.");

  m.def("enumerate_tasks", [] {
    py::list out;
    for (const auto& t : data::enumerate_tasks()) {
      py::dict d;
      d["name"] = t.name();
      d["family"] = data::family_name(t.family);
      d["shape"] = t.shape;
      d["position"] = t.position ? py::cast(*t.position) : py::none();
      d["orientation"] = t.orientation ? py::cast(*t.orientation) : py::none();
      out.append(d);
    }
    return out;
  });

  // --- numerics ------------------------------------------------------------
  m.def(
      "topk",
      [](const FloatArray& x, int k) {
        return array_from_tensor(num::topk(tensor_from_array(x), k));
      },
      py::arg("x"), py::arg("k"), "Row-wise TopK with lowest-index tie break.");

  m.def(
      "mse",
      [](const FloatArray& a, const FloatArray& b) {
        return num::mse(tensor_from_array(a), tensor_from_array(b)).scalar();
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "write_tensor",
      [](const std::string& path, const FloatArray& x) {
        num::write_tensor(path, tensor_from_array(x));
      },
      py::arg("path"), py::arg("x"), "Write a float32 tensor in the ETNS format.");

  m.def(
      "read_tensor",
      [](const std::string& path) { return array_from_tensor(num::read_tensor<float>(path)); },
      py::arg("path"));

  // --- models --------------------------------------------------------------
  py::class_<base::BaseAutoencoder>(m, "BaseAutoencoder")
      .def_property_readonly("kind",
                             [](const base::BaseAutoencoder& b) {
                               return std::string(base::kind_name(b.kind));
                             })
      .def_property_readonly("param_count", &base::BaseAutoencoder::param_count)
      .def(
          "middle_activations",
          [](const base::BaseAutoencoder& b, const FloatArray& images) {
            if (images.ndim() != 4) {
              throw num::ShapeError("expected images [n, 1, 64, 64]");
            }
            return array_from_tensor(b.middle_pre(tensor_from_array(images)));
          },
          py::arg("images"))
      .def(
          "reconstruct",
          [](const base::BaseAutoencoder& b, const FloatArray& images) {
            return array_from_tensor(b.forward(tensor_from_array(images)));
          },
          py::arg("images"));

  m.def(
      "build_base",
      [](const std::string& kind, std::uint64_t seed) {
        return base::build_base(base::kind_from_name(kind), seed);
      },
      py::arg("kind"), py::arg("seed"));
  m.def("load_base", &base::load_base, py::arg("dir"));

  py::class_<sae::SaeModel>(m, "SaeModel")
      .def_property_readonly("variant",
                             [](const sae::SaeModel& s) {
                               return std::string(sae::variant_name(s.variant));
                             })
      .def_readonly("k", &sae::SaeModel::k)
      .def_readonly("n_latents", &sae::SaeModel::n_latents)
      .def(
          "encode",
          [](const sae::SaeModel& s, const FloatArray& acts) {
            return array_from_tensor(sae::encode(s, tensor_from_array(acts)));
          },
          py::arg("activations"))
      .def(
          "decode",
          [](const sae::SaeModel& s, const FloatArray& z) {
            return array_from_tensor(sae::decode(s, tensor_from_array(z)));
          },
          py::arg("latents"));

  m.def(
      "build_sae",
      [](const std::string& variant, int k, std::uint64_t seed) {
        return sae::build_sae(sae::variant_from_name(variant), k, seed);
      },
      py::arg("variant"), py::arg("k"), py::arg("seed"));
  m.def("load_sae", &sae::load_sae, py::arg("dir"));

  // --- equivariance ----------------------------------------------------------
  py::class_<equi::TransformMatrix>(m, "TransformMatrix")
      .def_property_readonly(
          "matrix", [](const equi::TransformMatrix& t) { return array_from_tensor(t.m); });

  m.def("identity_transform", [] { return equi::identity_transform(); });
  m.def("load_transform", &equi::load_transform, py::arg("path"));

  m.def(
      "r_squared",
      [](const FloatArray& predicted, const FloatArray& truth) {
        return equi::r_squared(tensor_from_array(predicted), tensor_from_array(truth));
      },
      py::arg("predicted"), py::arg("truth"));

  m.def(
      "predict_transformed",
      [](const equi::TransformMatrix& t, const FloatArray& canonical, int p) {
        return array_from_tensor(equi::predict_transformed(t, tensor_from_array(canonical), p));
      },
      py::arg("transform"), py::arg("canonical"), py::arg("p"));

  m.def(
      "equivariant_reconstruct",
      [](const sae::SaeModel& s, const equi::TransformMatrix& t, const FloatArray& acts) {
        auto er = equi::equivariant_reconstruct(s, t, tensor_from_array(acts));
        py::array_t<float> recon(
            {static_cast<py::ssize_t>(er.inferred_powers.size()), py::ssize_t{256}});
        std::copy(er.reconstructions.begin(), er.reconstructions.end(),
                  recon.mutable_data());
        return py::make_tuple(recon, er.inferred_powers);
      },
      py::arg("sae"), py::arg("transform"), py::arg("activations"),
      "Returns (reconstructions [n, 256], inferred powers).");

  m.def(
      "classify_dictionary_features",
      [](const sae::SaeModel& s, const equi::TransformMatrix& t, double threshold) {
        auto fc = equi::classify_dictionary_features(s, t, threshold);
        py::list labels;
        for (auto l : fc.labels) {
          labels.append(l == equi::FeatureLabel::invariant     ? "invariant"
                        : l == equi::FeatureLabel::equivariant ? "equivariant"
                                                               : "dead");
        }
        return py::make_tuple(labels, fc.similarities);
      },
      py::arg("sae"), py::arg("transform"), py::arg("threshold") = 0.9);

  // --- probing ---------------------------------------------------------------
  m.def(
      "f1_score",
      [](const std::vector<int>& predictions, const std::vector<int>& labels) {
        std::vector<std::uint8_t> p(predictions.size()), l(labels.size());
        for (std::size_t i = 0; i < predictions.size(); ++i) p[i] = predictions[i] ? 1 : 0;
        for (std::size_t i = 0; i < labels.size(); ++i) l[i] = labels[i] ? 1 : 0;
        return probe::f1_score(p, l);
      },
      py::arg("predictions"), py::arg("labels"));

  m.def(
      "knn_probe",
      [](const FloatArray& features, const std::vector<int>& labels, double train_frac,
         std::uint64_t seed) {
        return probe::knn_probe(dataset_from_arrays(features, labels, train_frac, seed));
      },
      py::arg("features"), py::arg("labels"), py::arg("train_frac") = 0.75,
      py::arg("seed") = 0);

  m.def(
      "logreg_probe",
      [](const FloatArray& features, const std::vector<int>& labels, double train_frac,
         std::uint64_t seed) {
        return probe::logreg_probe(dataset_from_arrays(features, labels, train_frac, seed),
                                   seed);
      },
      py::arg("features"), py::arg("labels"), py::arg("train_frac") = 0.75,
      py::arg("seed") = 0);

  m.def(
      "gbt_probe",
      [](const FloatArray& features, const std::vector<int>& labels, double train_frac,
         std::uint64_t seed) {
        return probe::gbt_probe(dataset_from_arrays(features, labels, train_frac, seed));
      },
      py::arg("features"), py::arg("labels"), py::arg("train_frac") = 0.75,
      py::arg("seed") = 0);

  // --- pipeline ----------------------------------------------------------------
  m.def(
      "run_pipeline",
      [](const std::string& config_path, const std::string& stage) {
        auto config = run::load_config(config_path);
        if (stage == "all") run::cmd_all(config);
        else if (stage == "gen-data") run::cmd_gen_data(config);
        else if (stage == "train-base") run::cmd_train_base(config);
        else if (stage == "fit-m") run::cmd_fit_m(config);
        else if (stage == "train-sae") run::cmd_train_sae(config);
        else if (stage == "probe") run::cmd_probe(config);
        else if (stage == "report") run::cmd_report(config);
        else throw num::ParamError("unknown stage: " + stage);
      },
      py::arg("config_path"), py::arg("stage") = "all");
}

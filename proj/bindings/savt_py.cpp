#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "savt/analysis.hpp"
#include "savt/normalizers.hpp"
#include "savt/ops.hpp"
#include "savt/probes.hpp"
#include "savt/synthetic.hpp"
#include "savt/vit.hpp"

namespace py = pybind11;
using namespace savt;

namespace {

using InputArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const InputArray& arr) {
  std::vector<std::size_t> shape(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
  }
  return Tensor(std::move(shape), std::vector<double>(arr.data(), arr.data() + arr.size()));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.rank());
  for (std::size_t i = 0; i < t.rank(); ++i) shape[i] = static_cast<py::ssize_t>(t.extent(i));
  py::array_t<double> arr(shape);
  std::copy(t.data(), t.data() + t.numel(), arr.mutable_data());
  return arr;
}

EntmaxSolver solver_from_name(const std::string& name) {
  if (name == "bisect") return EntmaxSolver::kBisect;
  if (name == "sort") return EntmaxSolver::kSort;
  throw ValidationError("unknown solver '" + name + "' (bisect|sort)");
}

py::dict result_to_dict(const NormalizerResult& res) {
  py::dict d;
  d["p"] = to_array(res.p);
  py::list support;
  for (std::uint8_t s : res.support) support.append(static_cast<bool>(s));
  d["support"] = support;
  d["support_size"] = res.support_size();
  if (res.has_tau()) d["tau"] = res.tau();
  return d;
}

py::dict report_to_dict(const ProbeReport& r) {
  py::dict d;
  d["task"] = probe_task_name(r.task);
  d["lr"] = r.lr;
  d["iters"] = r.iters;
  d["metric"] = r.metric;
  d["metric_name"] = r.metric_name;
  d["loss_curve"] = r.loss_curve;
  return d;
}

NormalizerResult result_from_probs(const InputArray& p_arr) {
  Tensor p = to_tensor(p_arr);
  std::vector<std::uint8_t> support(p.numel());
  for (std::size_t i = 0; i < p.numel(); ++i) support[i] = p[i] > 0.0 ? 1 : 0;
  return NormalizerResult::with_tau(std::move(p), std::move(support), 0.0);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "entmax-1.5 sparse-attention ViT core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // normalizers
  m.def(
      "softmax", [](const InputArray& z) { return result_to_dict(softmax(to_tensor(z))); },
      py::arg("z"));
  m.def(
      "entmax15",
      [](const InputArray& z, const std::string& solver, double tol) {
        const Tensor t = to_tensor(z);
        return result_to_dict(solver_from_name(solver) == EntmaxSolver::kBisect
                                  ? entmax15_bisect(t, tol)
                                  : entmax15_sort(t));
      },
      py::arg("z"), py::arg("solver") = "sort", py::arg("tol") = 1e-12);
  m.def(
      "entmax15_vjp",
      [](const InputArray& p, const InputArray& upstream) {
        return to_array(entmax15_vjp(result_from_probs(p), to_tensor(upstream)));
      },
      py::arg("p"), py::arg("upstream"),
      "Backward pass through an entmax forward output p.");
  m.def(
      "softmax_vjp",
      [](const InputArray& p, const InputArray& upstream) {
        Tensor probs = to_tensor(p);
        const NormalizerResult res =
            NormalizerResult::without_tau(probs, std::vector<std::uint8_t>(probs.numel(), 1));
        return to_array(softmax_vjp(res, to_tensor(upstream)));
      },
      py::arg("p"), py::arg("upstream"));
  m.def(
      "normalize_rows",
      [](const InputArray& logits, const std::string& normalizer, const std::string& solver) {
        return to_array(normalize_rows(to_tensor(logits), normalizer_from_name(normalizer),
                                       solver_from_name(solver)));
      },
      py::arg("logits"), py::arg("normalizer") = "entmax15", py::arg("solver") = "sort");
  m.def("support_stats", [](const InputArray& p) {
    const SupportStats s = support_stats(to_tensor(p));
    py::dict d;
    d["mean_fraction"] = s.mean_fraction;
    d["min_fraction"] = s.min_fraction;
    d["max_fraction"] = s.max_fraction;
    d["rows"] = s.rows;
    return d;
  });

  // attention
  m.def(
      "attend",
      [](const InputArray& q, const InputArray& k, const InputArray& v,
         const std::string& normalizer) {
        const Tensor tq = to_tensor(q);
        AttentionConfig cfg{tq.extent(1), 1, normalizer_from_name(normalizer),
                            EntmaxSolver::kSort};
        const AttendResult r = attend(cfg, tq, to_tensor(k), to_tensor(v));
        return py::make_tuple(to_array(r.y), to_array(r.attn));
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("normalizer") = "entmax15");
  m.def(
      "attend_grad_logits",
      [](const InputArray& logits, const InputArray& v, const InputArray& upstream_y,
         const std::string& normalizer) {
        const Tensor tv = to_tensor(v);
        AttentionConfig cfg{tv.extent(1), 1, normalizer_from_name(normalizer),
                            EntmaxSolver::kSort};
        return to_array(attend_grad_logits(cfg, to_tensor(logits), tv, to_tensor(upstream_y)));
      },
      py::arg("logits"), py::arg("v"), py::arg("upstream_y"),
      py::arg("normalizer") = "entmax15");

  // vit
  py::class_<VitConfig>(m, "VitConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &VitConfig::image_size)
      .def_readwrite("patch_size", &VitConfig::patch_size)
      .def_readwrite("d_model", &VitConfig::d_model)
      .def_readwrite("n_heads", &VitConfig::n_heads)
      .def_readwrite("n_layers", &VitConfig::n_layers)
      .def_readwrite("mlp_ratio", &VitConfig::mlp_ratio)
      .def_readwrite("n_registers", &VitConfig::n_registers)
      .def_readwrite("ln_eps", &VitConfig::ln_eps)
      .def_property(
          "normalizer", [](const VitConfig& c) { return normalizer_name(c.normalizer); },
          [](VitConfig& c, const std::string& n) { c.normalizer = normalizer_from_name(n); })
      .def("n_tokens", &VitConfig::n_tokens)
      .def("n_patches", &VitConfig::n_patches)
      .def("grid", &VitConfig::grid)
      .def_static("tiny",
                  [](const std::string& n) { return VitConfig::tiny(normalizer_from_name(n)); },
                  py::arg("normalizer") = "softmax")
      .def_static("vit_s",
                  [](const std::string& n) { return VitConfig::vit_s(normalizer_from_name(n)); },
                  py::arg("normalizer") = "softmax");

  py::class_<VitModel>(m, "VitModel")
      .def_readonly("config", &VitModel::config)
      .def("parameter_count", &VitModel::parameter_count);

  py::class_<LayerFeatures>(m, "LayerFeatures")
      .def_property_readonly("n_layers",
                             [](const LayerFeatures& f) { return f.layers.size(); })
      .def("layer", [](const LayerFeatures& f, std::size_t l) { return to_array(f.layer(l)); })
      .def_property_readonly("final_ln",
                             [](const LayerFeatures& f) { return to_array(f.final_ln); })
      .def_property_readonly("grid", [](const LayerFeatures& f) {
        return py::make_tuple(f.tokens.rows, f.tokens.cols);
      });

  m.def(
      "init_model",
      [](const VitConfig& cfg, std::uint64_t seed) {
        Rng rng(seed);
        return init_model(cfg, rng);
      },
      py::arg("config"), py::arg("seed") = 0);
  m.def(
      "forward_features",
      [](const VitModel& model, const InputArray& image) {
        return forward_features(model, to_tensor(image));
      },
      py::arg("model"), py::arg("image"));
  m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
  m.def("load_model", &load_model, py::arg("path"));
  m.def(
      "extract_layer_set",
      [](const LayerFeatures& f, const std::string& mode, bool concat_cls) {
        if (mode != "final" && mode != "four_evenly_spaced") {
          throw ValidationError("mode must be 'final' or 'four_evenly_spaced'");
        }
        return to_array(extract_layer_set(
            f, mode == "final" ? LayerSetMode::kFinal : LayerSetMode::kFourEvenlySpaced,
            concat_cls));
      },
      py::arg("features"), py::arg("mode") = "final", py::arg("concat_cls") = false);
  m.def("evenly_spaced_layers", &evenly_spaced_layers, py::arg("n_layers"));

  // analysis
  m.def(
      "pib",
      [](const std::vector<LayerFeatures>& batch,
         const std::vector<std::tuple<double, double, double, double>>& boxes) {
        std::vector<BoxAnnotation> anns;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
          anns.push_back(BoxAnnotation{"image" + std::to_string(i), std::get<0>(boxes[i]),
                                       std::get<1>(boxes[i]), std::get<2>(boxes[i]),
                                       std::get<3>(boxes[i])});
        }
        const PibReport r = pib(batch, anns);
        py::list layers;
        for (const PibLayer& l : r.layers) {
          py::dict d;
          d["fraction"] = l.fraction;
          d["hits"] = l.hits;
          py::list argmax;
          for (const auto& rc : l.argmax) argmax.append(py::make_tuple(rc[0], rc[1]));
          d["argmax"] = argmax;
          layers.append(d);
        }
        py::dict out;
        out["n_images"] = r.n_images;
        out["layers"] = layers;
        return out;
      },
      py::arg("features"), py::arg("boxes"),
      "boxes are (x0, y0, x1, y1) pixel rectangles, half-open");
  m.def(
      "cls_patch_similarity",
      [](const LayerFeatures& f, std::size_t layer) {
        return to_array(cls_patch_similarity(f, layer));
      },
      py::arg("features"), py::arg("layer"));
  m.def(
      "pca_rgb",
      [](const InputArray& features, std::size_t grid_h, std::size_t grid_w) {
        return to_array(pca_rgb(to_tensor(features), grid_h, grid_w));
      },
      py::arg("features"), py::arg("grid_h"), py::arg("grid_w"));

  // probes
  m.def(
      "train_linear_probe",
      [](const InputArray& features, const InputArray& targets, const std::string& task,
         double lr, std::size_t iters, std::size_t batch, std::uint64_t seed,
         const std::vector<double>& lr_grid) {
        ProbeHyper hyper{lr, iters, batch, seed, lr_grid};
        return report_to_dict(train_linear_probe(to_tensor(features), to_tensor(targets),
                                                 probe_task_from_name(task), hyper));
      },
      py::arg("features"), py::arg("targets"), py::arg("task") = "classification",
      py::arg("lr") = 1e-3, py::arg("iters") = 2000, py::arg("batch") = 64, py::arg("seed") = 0,
      py::arg("lr_grid") = std::vector<double>{});
  m.def(
      "layer_sweep",
      [](const std::vector<LayerFeatures>& batch, const InputArray& patch_targets,
         bool concat_cls, double lr, std::size_t iters, std::size_t batch_size,
         std::uint64_t seed) {
        ProbeHyper hyper{lr, iters, batch_size, seed, {}};
        py::list out;
        for (const ProbeReport& r : layer_sweep(batch, to_tensor(patch_targets), concat_cls,
                                                hyper)) {
          out.append(report_to_dict(r));
        }
        return out;
      },
      py::arg("features"), py::arg("patch_targets"), py::arg("concat_cls") = false,
      py::arg("lr") = 1e-3, py::arg("iters") = 2000, py::arg("batch") = 64, py::arg("seed") = 0);

  // synthetic data
  m.def(
      "make_synthetic_dataset",
      [](std::uint64_t seed, std::size_t n_images, std::size_t image_size,
         std::size_t patch_size, std::size_t classes) {
        SyntheticConfig cfg{image_size, patch_size, n_images, classes, seed};
        py::list out;
        for (const SyntheticSample& s : make_synthetic_dataset(cfg)) {
          py::dict d;
          d["id"] = s.id;
          d["image"] = to_array(s.image);
          d["box"] = py::make_tuple(s.box.x0, s.box.y0, s.box.x1, s.box.y1);
          d["patch_labels"] = to_array(s.patch_labels);
          d["patch_depth"] = to_array(s.patch_depth);
          d["label"] = s.image_label;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("n_images") = 16, py::arg("image_size") = 32,
      py::arg("patch_size") = 8, py::arg("classes") = 2);
}

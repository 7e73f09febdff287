#include "savt/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "savt/acceptance.hpp"
#include "savt/analysis.hpp"
#include "savt/image.hpp"
#include "savt/normalizers.hpp"
#include "savt/ops.hpp"
#include "savt/parallel.hpp"
#include "savt/probes.hpp"
#include "savt/synthetic.hpp"
#include "savt/vit.hpp"

namespace savt::cli {

namespace {

using nlohmann::json;

// Input problems that map to exit code 2 (usage), unlike runtime failures.
struct InputParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void emit(const json& doc, const std::string& out_path, std::ostream& out) {
  const std::string text = doc.dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + out_path + "' for writing");
    f << text;
  }
}

std::vector<std::vector<double>> read_logit_rows(const std::string& path,
                                                 const std::string& format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  if (format == "json") {
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw InputParseError("parse error in '" + path + "': " + e.what());
    }
    if (doc.is_object() && doc.contains("rows")) doc = doc["rows"];
    if (!doc.is_array()) {
      throw InputParseError("parse error in '" + path + "': expected an array of rows");
    }
    std::size_t line = 0;
    for (const auto& r : doc) {
      ++line;
      if (!r.is_array() || r.empty()) {
        throw InputParseError("parse error at row " + std::to_string(line) +
                              ": expected a nonempty array");
      }
      std::vector<double> row;
      for (const auto& v : r) {
        if (!v.is_number()) {
          throw InputParseError("parse error at row " + std::to_string(line) +
                                ": non-numeric entry");
        }
        row.push_back(v.get<double>());
      }
      rows.push_back(std::move(row));
    }
  } else {
    std::string lineText;
    std::size_t line = 0;
    while (std::getline(in, lineText)) {
      ++line;
      if (lineText.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(lineText);
      std::string token;
      while (std::getline(ss, token, ',')) {
        token.erase(0, token.find_first_not_of(" \t\r"));
        token.erase(token.find_last_not_of(" \t\r") + 1);
        try {
          std::size_t pos = 0;
          const double v = std::stod(token, &pos);
          if (pos != token.size()) throw std::invalid_argument(token);
          row.push_back(v);
        } catch (const std::exception&) {
          throw InputParseError("parse error at line " + std::to_string(line) + ": '" + token +
                                "' is not a number");
        }
      }
      if (row.empty()) {
        throw InputParseError("parse error at line " + std::to_string(line) + ": empty row");
      }
      rows.push_back(std::move(row));
    }
  }
  if (rows.empty()) throw InputParseError("parse error: '" + path + "' contains no rows");
  return rows;
}

// ---------------------------------------------------------------------------
// synthetic dataset files

struct DatasetEntry {
  std::string id, file;
  std::size_t label = 0;
  BoxAnnotation box;
  Tensor patch_labels, patch_depth;  // [grid x grid]
};

struct Dataset {
  std::filesystem::path dir;
  std::size_t image_size = 0, patch_size = 0, grid = 0;
  std::vector<DatasetEntry> entries;
};

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputParseError("parse error in '" + path + "': " + e.what());
  }
  Dataset ds;
  ds.dir = std::filesystem::path(path).parent_path();
  try {
    ds.image_size = doc.at("image_size").get<std::size_t>();
    ds.patch_size = doc.at("patch_size").get<std::size_t>();
    ds.grid = doc.at("grid").get<std::size_t>();
    for (const auto& e : doc.at("images")) {
      DatasetEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.file = e.at("file").get<std::string>();
      entry.label = e.at("label").get<std::size_t>();
      const auto& b = e.at("box");
      entry.box = BoxAnnotation{entry.id, b.at(0).get<double>(), b.at(1).get<double>(),
                                b.at(2).get<double>(), b.at(3).get<double>()};
      std::vector<double> labels = e.at("patch_labels").get<std::vector<double>>();
      std::vector<double> depth = e.at("patch_depth").get<std::vector<double>>();
      entry.patch_labels = Tensor({ds.grid, ds.grid}, std::move(labels));
      entry.patch_depth = Tensor({ds.grid, ds.grid}, std::move(depth));
      ds.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw InputParseError("parse error in '" + path + "': " + e.what());
  }
  return ds;
}

Tensor load_entry_image(const Dataset& ds, const DatasetEntry& e) {
  return read_ppm((ds.dir / e.file).string());
}

void write_dataset(const std::vector<SyntheticSample>& samples, const SyntheticConfig& cfg,
                   const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  json images = json::array();
  for (const SyntheticSample& s : samples) {
    const std::string file = s.id + ".ppm";
    write_ppm((std::filesystem::path(out_dir) / file).string(), s.image);
    images.push_back({{"id", s.id},
                      {"file", file},
                      {"label", s.image_label},
                      {"box", {s.box.x0, s.box.y0, s.box.x1, s.box.y1}},
                      {"patch_labels", s.patch_labels.flat()},
                      {"patch_depth", s.patch_depth.flat()}});
  }
  const json doc{{"image_size", cfg.image_size},
                 {"patch_size", cfg.patch_size},
                 {"grid", cfg.image_size / cfg.patch_size},
                 {"images", images}};
  std::ofstream f(std::filesystem::path(out_dir) / "data.json",
                  std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write dataset index in '" + out_dir + "'");
  f << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// report serialization

json report_to_json(const ProbeReport& r) {
  return {{"task", probe_task_name(r.task)}, {"lr", r.lr},
          {"iters", r.iters},                {"metric", r.metric},
          {"metric_name", r.metric_name},    {"loss_curve", r.loss_curve}};
}

json pib_to_json(const PibReport& r) {
  json layers = json::array();
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    json argmax = json::array();
    for (const auto& rc : r.layers[l].argmax) argmax.push_back({rc[0], rc[1]});
    layers.push_back({{"layer", l + 1},
                      {"fraction", r.layers[l].fraction},
                      {"hits", r.layers[l].hits},
                      {"argmax", argmax}});
  }
  return {{"n_images", r.n_images}, {"layers", layers}};
}

// ---------------------------------------------------------------------------
// per-command state and handlers

struct NormalizeArgs {
  std::string input, format = "csv", normalizer = "entmax15", solver = "sort", out;
  bool cross_check = false;
  double tol = 1e-12;
};

void cmd_normalize(const NormalizeArgs& a, std::ostream& out) {
  const auto rows = read_logit_rows(a.input, a.format);
  const NormalizerKind kind = normalizer_from_name(a.normalizer);
  if (a.tol <= 0.0) throw ValidationError("--tol must be positive");
  const auto eval = [&](const Tensor& z, const std::string& solver) {
    if (kind == NormalizerKind::kSoftmax) return softmax(z);
    return solver == "bisect" ? entmax15_bisect(z, a.tol) : entmax15_sort(z);
  };
  json jrows = json::array();
  double max_diff = 0.0;
  for (const auto& row : rows) {
    const Tensor z = Tensor::row(row);
    const NormalizerResult res = eval(z, a.solver);
    json jr{{"p", res.p.flat()}, {"support_size", res.support_size()}};
    if (res.has_tau()) jr["tau"] = res.tau();
    if (a.cross_check && kind == NormalizerKind::kEntmax15) {
      const NormalizerResult other = eval(z, a.solver == "bisect" ? "sort" : "bisect");
      for (std::size_t i = 0; i < res.p.numel(); ++i) {
        max_diff = std::max(max_diff, std::abs(res.p[i] - other.p[i]));
      }
    }
    jrows.push_back(std::move(jr));
  }
  json doc{{"normalizer", a.normalizer}, {"solver", a.solver}, {"rows", jrows}};
  if (a.cross_check && kind == NormalizerKind::kEntmax15) {
    const bool pass = max_diff < 1e-9;
    doc["cross_check"] = {{"max_abs_diff", max_diff}, {"pass", pass}};
    if (!pass) {
      emit(doc, a.out, out);
      throw NumericError("cross-check failed: solvers differ by " + std::to_string(max_diff));
    }
  }
  emit(doc, a.out, out);
}

struct ModelInitArgs {
  std::string preset = "tiny", normalizer, out;
  std::int64_t image_size = -1, patch_size = -1, d_model = -1, n_heads = -1, n_layers = -1,
               mlp_ratio = -1, registers = -1;
  double ln_eps = -1.0;
  std::uint64_t seed = 0;
};

VitConfig config_from_args(const ModelInitArgs& a) {
  VitConfig cfg;
  if (a.preset == "tiny") {
    cfg = VitConfig::tiny();
  } else if (a.preset == "vits") {
    cfg = VitConfig::vit_s();
  } else {
    throw ValidationError("unknown preset '" + a.preset + "' (tiny|vits)");
  }
  if (a.image_size >= 0) cfg.image_size = static_cast<std::size_t>(a.image_size);
  if (a.patch_size >= 0) cfg.patch_size = static_cast<std::size_t>(a.patch_size);
  if (a.d_model >= 0) cfg.d_model = static_cast<std::size_t>(a.d_model);
  if (a.n_heads >= 0) cfg.n_heads = static_cast<std::size_t>(a.n_heads);
  if (a.n_layers >= 0) cfg.n_layers = static_cast<std::size_t>(a.n_layers);
  if (a.mlp_ratio >= 0) cfg.mlp_ratio = static_cast<std::size_t>(a.mlp_ratio);
  if (a.registers >= 0) cfg.n_registers = static_cast<std::size_t>(a.registers);
  if (a.ln_eps > 0) cfg.ln_eps = a.ln_eps;
  if (!a.normalizer.empty()) cfg.normalizer = normalizer_from_name(a.normalizer);
  cfg.validate();
  return cfg;
}

void cmd_model_init(const ModelInitArgs& a, std::ostream& out) {
  const VitConfig cfg = config_from_args(a);
  Rng rng(a.seed);
  const VitModel model = init_model(cfg, rng);
  save_model(model, a.out);
  emit(json{{"out", a.out},
            {"parameter_count", model.parameter_count()},
            {"n_tokens", cfg.n_tokens()},
            {"config", config_to_json(cfg)}},
       "", out);
}

struct ForwardArgs {
  std::string weights, image, data, out;
  std::size_t threads = 1;
};

std::vector<LayerFeatures> run_forward_batch(const VitModel& model,
                                             const std::vector<Tensor>& images,
                                             std::size_t threads) {
  std::vector<LayerFeatures> batch(images.size());
  parallel_for(images.size(), threads,
               [&](std::size_t i) { batch[i] = forward_features(model, images[i]); });
  return batch;
}

void cmd_model_forward(const ForwardArgs& a, bool single, std::ostream& out) {
  const VitModel model = load_model(a.weights);
  std::vector<Tensor> images;
  if (single) {
    images.push_back(read_ppm(a.image));
  } else {
    const Dataset ds = load_dataset(a.data);
    for (const DatasetEntry& e : ds.entries) images.push_back(load_entry_image(ds, e));
  }
  const auto batch = run_forward_batch(model, images, a.threads);
  save_features(a.out, batch);
  emit(json{{"out", a.out},
            {"n_images", batch.size()},
            {"n_layers", model.config.n_layers},
            {"n_tokens", model.config.n_tokens()},
            {"d_model", model.config.d_model}},
       "", out);
}

struct SynthArgs {
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t n_images = 16, image_size = 32, patch_size = 8, classes = 2;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  SyntheticConfig cfg;
  cfg.seed = a.seed;
  cfg.n_images = a.n_images;
  cfg.image_size = a.image_size;
  cfg.patch_size = a.patch_size;
  cfg.n_foreground_classes = a.classes;
  const auto samples = make_synthetic_dataset(cfg);
  write_dataset(samples, cfg, a.out_dir);
  emit(json{{"out_dir", a.out_dir}, {"n_images", samples.size()}}, "", out);
}

struct AnalyzeArgs {
  std::string features, data, out, out_image, layer = "final";
  std::size_t image_index = 0;
  std::size_t upscale = 1;
  // support subcommand reuses the normalize input flags
  std::string input, format = "csv", normalizer = "entmax15", solver = "sort";
};

void cmd_analyze_pib(const AnalyzeArgs& a, std::ostream& out) {
  const auto batch = load_features(a.features);
  const Dataset ds = load_dataset(a.data);
  std::vector<BoxAnnotation> boxes;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (i >= ds.entries.size()) {
      char id[16];
      std::snprintf(id, sizeof(id), "img%04zu", i);
      throw ValidationError("pib: missing annotation for image '" + std::string(id) + "'");
    }
    boxes.push_back(ds.entries[i].box);
  }
  emit(pib_to_json(pib(batch, boxes)), a.out, out);
}

std::size_t parse_layer_flag(const std::string& layer, std::size_t n_layers, bool allow_final) {
  if (layer == "final") {
    if (!allow_final) throw ValidationError("layer 'final' is not valid here");
    return 0;  // sentinel: final-LN
  }
  std::size_t l = 0;
  try {
    l = std::stoul(layer);
  } catch (const std::exception&) {
    throw ValidationError("bad layer '" + layer + "' (1..n or 'final')");
  }
  if (l == 0 || l > n_layers) {
    throw ValidationError("layer " + layer + " out of range 1.." + std::to_string(n_layers));
  }
  return l;
}

void cmd_analyze_sim(const AnalyzeArgs& a, std::ostream& out) {
  const auto batch = load_features(a.features);
  if (a.image_index >= batch.size()) {
    throw ValidationError("image index " + std::to_string(a.image_index) + " out of range");
  }
  const LayerFeatures& f = batch[a.image_index];
  const std::size_t layer = parse_layer_flag(a.layer, f.layers.size(), false);
  const Tensor sims = cls_patch_similarity(f, layer);
  if (!a.out_image.empty()) {
    Tensor img({sims.extent(0), sims.extent(1), 3});
    for (std::size_t r = 0; r < sims.extent(0); ++r) {
      for (std::size_t c = 0; c < sims.extent(1); ++c) {
        const double v = (sims(r, c) + 1.0) * 0.5;
        img(r, c, 0) = v;
        img(r, c, 1) = v;
        img(r, c, 2) = v;
      }
    }
    write_ppm(a.out_image, img, a.upscale);
  }
  emit(json{{"image_index", a.image_index},
            {"layer", layer},
            {"grid", {sims.extent(0), sims.extent(1)}},
            {"similarity", sims.flat()}},
       a.out, out);
}

Tensor patch_features_of(const LayerFeatures& f, std::size_t layer_sentinel) {
  const TokenMap& tok = f.tokens;
  const Tensor& tokens = layer_sentinel == 0 ? f.final_ln : f.layer(layer_sentinel);
  const std::size_t d = tokens.extent(1);
  Tensor out({tok.n_patches(), d});
  std::copy(tokens.data() + tok.patch_offset() * d,
            tokens.data() + (tok.patch_offset() + tok.n_patches()) * d, out.data());
  return out;
}

void cmd_analyze_pca(const AnalyzeArgs& a, std::ostream& out) {
  const auto batch = load_features(a.features);
  if (a.image_index >= batch.size()) {
    throw ValidationError("image index " + std::to_string(a.image_index) + " out of range");
  }
  const LayerFeatures& f = batch[a.image_index];
  const std::size_t layer = parse_layer_flag(a.layer, f.layers.size(), true);
  const Tensor rgb = pca_rgb(patch_features_of(f, layer), f.tokens.rows, f.tokens.cols);
  write_ppm(a.out_image, rgb, a.upscale);
  emit(json{{"image_index", a.image_index},
            {"layer", a.layer},
            {"out_image", a.out_image},
            {"grid", {f.tokens.rows, f.tokens.cols}}},
       a.out, out);
}

void cmd_analyze_support(const AnalyzeArgs& a, std::ostream& out) {
  const auto rows = read_logit_rows(a.input, a.format);
  const NormalizerKind kind = normalizer_from_name(a.normalizer);
  const EntmaxSolver solver =
      a.solver == "bisect" ? EntmaxSolver::kBisect : EntmaxSolver::kSort;
  const std::size_t n = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != n) throw ValidationError("support: rows have mixed lengths");
  }
  Tensor batch({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), batch.data() + i * n);
  }
  const SupportStats stats = support_stats(normalize_rows(batch, kind, solver));
  emit(json{{"normalizer", a.normalizer},
            {"rows", stats.rows},
            {"mean_fraction", stats.mean_fraction},
            {"min_fraction", stats.min_fraction},
            {"max_fraction", stats.max_fraction}},
       a.out, out);
}

struct ProbeArgs {
  std::string features, data, weights, out, layer = "final", lr_grid;
  bool concat_cls = false, layer_sweep_flag = false, global_bit = false;
  double lr = 1e-3;
  std::size_t iters = 2000, batch = 64, threads = 1;
  std::uint64_t seed = 0;
};

ProbeHyper hyper_from_args(const ProbeArgs& a) {
  ProbeHyper h;
  h.lr = a.lr;
  h.iters = a.iters;
  h.batch = a.batch;
  h.seed = a.seed;
  if (!a.lr_grid.empty()) {
    std::stringstream ss(a.lr_grid);
    std::string token;
    while (std::getline(ss, token, ',')) {
      try {
        h.lr_grid.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw ValidationError("bad --lr-grid entry '" + token + "'");
      }
    }
  }
  return h;
}

void cmd_probe_cls(const ProbeArgs& a, std::ostream& out) {
  const auto batch = load_features(a.features);
  const Dataset ds = load_dataset(a.data);
  if (ds.entries.size() < batch.size()) {
    throw ValidationError("probe cls: dataset has fewer labels than feature images");
  }
  const std::size_t d = batch.front().config.d_model;
  Tensor features({batch.size(), d});
  Tensor targets({batch.size()});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::copy(batch[i].final_ln.data(), batch[i].final_ln.data() + d, features.data() + i * d);
    targets[i] = static_cast<double>(ds.entries[i].label);
  }
  const ProbeReport r =
      train_linear_probe(features, targets, ProbeTask::kClassification, hyper_from_args(a));
  emit(report_to_json(r), a.out, out);
}

Tensor dense_targets(const Dataset& ds, std::size_t n_images) {
  const std::size_t np = ds.grid * ds.grid;
  Tensor targets({n_images * np});
  for (std::size_t i = 0; i < n_images; ++i) {
    for (std::size_t p = 0; p < np; ++p) targets[i * np + p] = ds.entries[i].patch_labels[p];
  }
  return targets;
}

void cmd_probe_dense(const ProbeArgs& a, std::ostream& out) {
  const ProbeHyper hyper = hyper_from_args(a);

  if (a.global_bit) {
    // Constructed task: forward the dataset through the model, inject the
    // per-image bit into CLS, then compare patch-only vs CLS-concat sweeps.
    if (a.weights.empty()) {
      throw ValidationError("probe dense --global-bit requires --weights");
    }
    const VitModel model = load_model(a.weights);
    const Dataset ds = load_dataset(a.data);
    std::vector<SyntheticSample> samples;
    for (const DatasetEntry& e : ds.entries) {
      SyntheticSample s;
      s.id = e.id;
      s.image = load_entry_image(ds, e);
      s.box = e.box;
      s.patch_labels = e.patch_labels;
      s.patch_depth = e.patch_depth;
      s.image_label = e.label;
      samples.push_back(std::move(s));
    }
    const GlobalBitTask task = make_global_bit_task(model, samples, a.seed);
    const auto patch_only = layer_sweep(task.features, task.patch_labels, false, hyper);
    const auto concat = layer_sweep(task.features, task.patch_labels, true, hyper);
    json jp = json::array(), jc = json::array();
    bool all_strict = true;
    for (std::size_t l = 0; l < patch_only.size(); ++l) {
      jp.push_back(report_to_json(patch_only[l]));
      jc.push_back(report_to_json(concat[l]));
      all_strict = all_strict && concat[l].metric > patch_only[l].metric;
    }
    emit(json{{"task", "dense_seg"},
              {"layer_sweep", true},
              {"global_bit", true},
              {"patch_only", jp},
              {"concat_cls", jc},
              {"concat_strictly_better", all_strict}},
         a.out, out);
    return;
  }

  const auto batch = load_features(a.features);
  const Dataset ds = load_dataset(a.data);
  if (ds.entries.size() < batch.size()) {
    throw ValidationError("probe dense: dataset has fewer masks than feature images");
  }
  const Tensor targets = dense_targets(ds, batch.size());

  if (a.layer_sweep_flag) {
    const auto reports = layer_sweep(batch, targets, a.concat_cls, hyper);
    json layers = json::array();
    for (std::size_t l = 0; l < reports.size(); ++l) {
      json jr = report_to_json(reports[l]);
      jr["layer"] = l + 1;
      layers.push_back(std::move(jr));
    }
    emit(json{{"task", "dense_seg"},
              {"layer_sweep", true},
              {"concat_cls", a.concat_cls},
              {"layers", layers}},
         a.out, out);
    return;
  }

  const std::size_t layer = parse_layer_flag(a.layer, batch.front().layers.size(), true);
  Tensor features;
  if (layer == 0) {
    std::vector<Tensor> parts;
    for (const LayerFeatures& f : batch) {
      parts.push_back(extract_layer_set(f, LayerSetMode::kFinal, a.concat_cls));
    }
    features = concat(parts, 0);
  } else {
    features = stack_layer_patches(batch, layer, a.concat_cls);
  }
  const ProbeReport r = train_linear_probe(features, targets, ProbeTask::kDenseSeg, hyper);
  json jr = report_to_json(r);
  jr["layer"] = a.layer;
  jr["concat_cls"] = a.concat_cls;
  emit(jr, a.out, out);
}

void cmd_probe_depth(const ProbeArgs& a, std::ostream& out) {
  const auto batch = load_features(a.features);
  const Dataset ds = load_dataset(a.data);
  if (ds.entries.size() < batch.size()) {
    throw ValidationError("probe depth: dataset has fewer depth maps than feature images");
  }
  const std::size_t np = ds.grid * ds.grid;
  // Four evenly spaced layers, patch + CLS features, pre-final-LN.
  std::vector<Tensor> parts;
  for (const LayerFeatures& f : batch) {
    parts.push_back(extract_layer_set(f, LayerSetMode::kFourEvenlySpaced, true));
  }
  const Tensor features = concat(parts, 0);
  Tensor targets({batch.size() * np});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t p = 0; p < np; ++p) targets[i * np + p] = ds.entries[i].patch_depth[p];
  }
  const ProbeReport r =
      train_linear_probe(features, targets, ProbeTask::kDenseDepth, hyper_from_args(a));
  emit(report_to_json(r), a.out, out);
}

struct AcceptArgs {
  std::string out, work_dir;
  std::uint64_t seed = 7;
  double perturb_entmax_tau = 0.0;
  std::size_t threads = 1;
};

void cmd_accept(const AcceptArgs& a, std::ostream& out, int& exit_code) {
  AcceptanceOptions opts;
  opts.seed = a.seed;
  opts.work_dir = a.work_dir;
  opts.entmax_tau_perturbation = a.perturb_entmax_tau;
  opts.threads = a.threads;
  const AcceptanceSummary summary = run_acceptance(opts, out);
  if (!a.out.empty()) emit(acceptance_to_json(summary), a.out, out);
  exit_code = summary.all_pass ? 0 : 1;
}

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"entmax-1.5 sparse-attention ViT toolkit"};
  app.require_subcommand(1);
  app.set_config("--config-file");
  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker thread cap")->envname("SAVT_THREADS");

  NormalizeArgs na;
  CLI::App* nrm = app.add_subcommand("normalize", "evaluate normalizers on logit rows");
  nrm->add_option("--input", na.input, "csv or json file of logit rows")->required();
  nrm->add_option("--format", na.format)->check(CLI::IsMember({"csv", "json"}));
  nrm->add_option("--normalizer", na.normalizer)->check(CLI::IsMember({"softmax", "entmax15"}));
  nrm->add_option("--solver", na.solver)->check(CLI::IsMember({"bisect", "sort"}));
  nrm->add_flag("--cross-check", na.cross_check, "compare both entmax solvers");
  nrm->add_option("--tol", na.tol, "bisection tolerance on tau");
  nrm->add_option("--out", na.out, "write the JSON report here instead of stdout");

  ModelInitArgs mia;
  CLI::App* model = app.add_subcommand("model", "model lifecycle");
  model->require_subcommand(1);
  CLI::App* init = model->add_subcommand("init", "initialize and save a model");
  init->add_option("--preset", mia.preset)->check(CLI::IsMember({"tiny", "vits"}));
  init->add_option("--image-size", mia.image_size);
  init->add_option("--patch-size", mia.patch_size);
  init->add_option("--d-model", mia.d_model);
  init->add_option("--n-heads", mia.n_heads);
  init->add_option("--n-layers", mia.n_layers);
  init->add_option("--mlp-ratio", mia.mlp_ratio);
  init->add_option("--registers", mia.registers);
  init->add_option("--ln-eps", mia.ln_eps);
  init->add_option("--normalizer", mia.normalizer)
      ->check(CLI::IsMember({"softmax", "entmax15"}));
  init->add_option("--seed", mia.seed);
  init->add_option("--out", mia.out, "weights file")->required();

  ForwardArgs fa;
  CLI::App* fwd = model->add_subcommand("forward", "forward one image, dump features");
  fwd->add_option("--weights", fa.weights)->required();
  fwd->add_option("--image", fa.image, "PPM image")->required();
  fwd->add_option("--out", fa.out, "features file")->required();

  CLI::App* dump = model->add_subcommand("dump-features", "forward a dataset, dump features");
  dump->add_option("--weights", fa.weights)->required();
  dump->add_option("--data", fa.data, "dataset data.json")->required();
  dump->add_option("--out", fa.out, "features file")->required();

  SynthArgs sa;
  CLI::App* synth = app.add_subcommand("synth", "generate the seeded synthetic dataset");
  synth->add_option("--seed", sa.seed);
  synth->add_option("--n-images", sa.n_images);
  synth->add_option("--image-size", sa.image_size);
  synth->add_option("--patch-size", sa.patch_size);
  synth->add_option("--classes", sa.classes);
  synth->add_option("--out-dir", sa.out_dir)->required();

  AnalyzeArgs aa;
  CLI::App* analyze = app.add_subcommand("analyze", "feature analysis");
  analyze->require_subcommand(1);
  CLI::App* apib = analyze->add_subcommand("pib", "point-in-box report");
  apib->add_option("--features", aa.features)->required();
  apib->add_option("--data", aa.data, "dataset with boxes")->required();
  apib->add_option("--out", aa.out);
  CLI::App* asim = analyze->add_subcommand("sim", "CLS-patch cosine similarity map");
  asim->add_option("--features", aa.features)->required();
  asim->add_option("--image-index", aa.image_index);
  asim->add_option("--layer", aa.layer, "1..n_layers");
  asim->add_option("--out-image", aa.out_image, "PPM heatmap");
  asim->add_option("--upscale", aa.upscale);
  asim->add_option("--out", aa.out);
  CLI::App* apca = analyze->add_subcommand("pca", "PCA-RGB visualization");
  apca->add_option("--features", aa.features)->required();
  apca->add_option("--image-index", aa.image_index);
  apca->add_option("--layer", aa.layer, "1..n_layers or 'final'");
  apca->add_option("--out-image", aa.out_image, "PPM output")->required();
  apca->add_option("--upscale", aa.upscale);
  apca->add_option("--out", aa.out);
  CLI::App* asup = analyze->add_subcommand("support", "support statistics of normalized rows");
  asup->add_option("--input", aa.input, "csv or json logit rows")->required();
  asup->add_option("--format", aa.format)->check(CLI::IsMember({"csv", "json"}));
  asup->add_option("--normalizer", aa.normalizer)
      ->check(CLI::IsMember({"softmax", "entmax15"}));
  asup->add_option("--solver", aa.solver)->check(CLI::IsMember({"bisect", "sort"}));
  asup->add_option("--out", aa.out);

  ProbeArgs pa;
  CLI::App* probe = app.add_subcommand("probe", "linear probes on frozen features");
  probe->require_subcommand(1);
  CLI::App* pcls = probe->add_subcommand("cls", "image classification on the CLS feature");
  pcls->add_option("--features", pa.features)->required();
  pcls->add_option("--data", pa.data)->required();
  pcls->add_option("--lr", pa.lr);
  pcls->add_option("--lr-grid", pa.lr_grid, "comma-separated learning rates");
  pcls->add_option("--iters", pa.iters);
  pcls->add_option("--batch", pa.batch);
  pcls->add_option("--seed", pa.seed);
  pcls->add_option("--out", pa.out);
  CLI::App* pdense = probe->add_subcommand("dense", "dense segmentation-style probe");
  pdense->add_option("--features", pa.features);
  pdense->add_option("--weights", pa.weights, "model weights (global-bit mode)");
  pdense->add_option("--data", pa.data)->required();
  pdense->add_option("--layer", pa.layer, "1..n_layers or 'final'");
  pdense->add_flag("--concat-cls", pa.concat_cls);
  pdense->add_flag("--layer-sweep", pa.layer_sweep_flag);
  pdense->add_flag("--global-bit", pa.global_bit,
                   "run the constructed global-bit comparison (needs --weights)");
  pdense->add_option("--lr", pa.lr);
  pdense->add_option("--lr-grid", pa.lr_grid);
  pdense->add_option("--iters", pa.iters);
  pdense->add_option("--batch", pa.batch);
  pdense->add_option("--seed", pa.seed);
  pdense->add_option("--out", pa.out);
  CLI::App* pdepth =
      probe->add_subcommand("depth", "dense depth probe over four evenly spaced layers");
  pdepth->add_option("--features", pa.features)->required();
  pdepth->add_option("--data", pa.data)->required();
  pdepth->add_option("--lr", pa.lr);
  pdepth->add_option("--lr-grid", pa.lr_grid);
  pdepth->add_option("--iters", pa.iters);
  pdepth->add_option("--batch", pa.batch);
  pdepth->add_option("--seed", pa.seed);
  pdepth->add_option("--out", pa.out);

  AcceptArgs ca;
  CLI::App* accept = app.add_subcommand("accept", "run the acceptance suite");
  accept->add_option("--out", ca.out, "machine-readable JSON summary");
  accept->add_option("--seed", ca.seed);
  accept->add_option("--work-dir", ca.work_dir, "scratch directory");
  accept->add_option("--perturb-entmax-tau", ca.perturb_entmax_tau,
                     "test hook: shift the entmax threshold (negative control)");

  int exit_code = 0;
  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);

    if (*nrm) {
      cmd_normalize(na, out);
    } else if (*init) {
      cmd_model_init(mia, out);
    } else if (*fwd || *dump) {
      fa.threads = threads;
      cmd_model_forward(fa, static_cast<bool>(*fwd), out);
    } else if (*synth) {
      cmd_synth(sa, out);
    } else if (*apib) {
      cmd_analyze_pib(aa, out);
    } else if (*asim) {
      cmd_analyze_sim(aa, out);
    } else if (*apca) {
      cmd_analyze_pca(aa, out);
    } else if (*asup) {
      cmd_analyze_support(aa, out);
    } else if (*pcls) {
      cmd_probe_cls(pa, out);
    } else if (*pdense) {
      pa.threads = threads;
      cmd_probe_dense(pa, out);
    } else if (*pdepth) {
      cmd_probe_depth(pa, out);
    } else if (*accept) {
      ca.threads = threads;
      cmd_accept(ca, out, exit_code);
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  } catch (const InputParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}

}  // namespace savt::cli

#include "savt/vit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "savt/container.hpp"
#include "savt/ops.hpp"

namespace savt {

void VitConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 ||
      mlp_ratio == 0) {
    throw ValidationError("vit: config extents must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ValidationError("vit: image_size " + std::to_string(image_size) +
                          " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (d_model % n_heads != 0) {
    throw ValidationError("vit: n_heads " + std::to_string(n_heads) + " does not divide d_model " +
                          std::to_string(d_model));
  }
  if (ln_eps <= 0.0) throw ValidationError("vit: ln_eps must be positive");
}

VitConfig VitConfig::tiny(NormalizerKind normalizer) {
  VitConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.normalizer = normalizer;
  return cfg;
}

VitConfig VitConfig::vit_s(NormalizerKind normalizer) {
  VitConfig cfg;
  cfg.normalizer = normalizer;
  return cfg;
}

std::size_t VitModel::parameter_count() const {
  std::size_t n = patch_embed_w.numel() + patch_embed_b.numel() + cls_token.numel() +
                  register_tokens.numel() + pos_embed.numel() + final_ln.gamma.numel() +
                  final_ln.beta.numel();
  for (const BlockWeights& b : blocks) {
    n += b.ln1.gamma.numel() + b.ln1.beta.numel() + b.ln2.gamma.numel() + b.ln2.beta.numel();
    n += b.attn.w_q.numel() + b.attn.w_k.numel() + b.attn.w_v.numel() + b.attn.w_o.numel();
    n += b.attn.b_q.numel() + b.attn.b_k.numel() + b.attn.b_v.numel() + b.attn.b_o.numel();
    n += b.mlp.w1.numel() + b.mlp.b1.numel() + b.mlp.w2.numel() + b.mlp.b2.numel();
  }
  return n;
}

const Tensor& LayerFeatures::layer(std::size_t one_based) const {
  if (one_based == 0 || one_based > layers.size()) {
    throw ValidationError("features: layer " + std::to_string(one_based) + " out of range 1.." +
                          std::to_string(layers.size()));
  }
  return layers[one_based - 1];
}

namespace {

Tensor trunc_normal_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.truncated_normal(0.02);
  return t;
}

}  // namespace

VitModel init_model(const VitConfig& cfg, Rng& rng) {
  cfg.validate();
  VitModel m;
  m.config = cfg;
  const std::size_t d = cfg.d_model;

  // Fixed draw order: patch embed, cls, registers, positions, then per block
  // wq, wk, wv, wo, w1, w2. Biases and layer-norm offsets start at zero.
  m.patch_embed_w = trunc_normal_tensor({cfg.patch_dim(), d}, rng);
  m.patch_embed_b = Tensor({d});
  m.cls_token = trunc_normal_tensor({d}, rng);
  m.register_tokens = trunc_normal_tensor({cfg.n_registers, d}, rng);
  m.pos_embed = trunc_normal_tensor({cfg.n_patches(), d}, rng);

  m.blocks.resize(cfg.n_layers);
  for (BlockWeights& b : m.blocks) {
    b.ln1 = {Tensor::full({d}, 1.0), Tensor({d})};
    b.attn.w_q = trunc_normal_tensor({d, d}, rng);
    b.attn.w_k = trunc_normal_tensor({d, d}, rng);
    b.attn.w_v = trunc_normal_tensor({d, d}, rng);
    b.attn.w_o = trunc_normal_tensor({d, d}, rng);
    b.attn.b_q = Tensor({d});
    b.attn.b_k = Tensor({d});
    b.attn.b_v = Tensor({d});
    b.attn.b_o = Tensor({d});
    b.ln2 = {Tensor::full({d}, 1.0), Tensor({d})};
    const std::size_t hidden = cfg.mlp_ratio * d;
    b.mlp.w1 = trunc_normal_tensor({d, hidden}, rng);
    b.mlp.b1 = Tensor({hidden});
    b.mlp.w2 = trunc_normal_tensor({hidden, d}, rng);
    b.mlp.b2 = Tensor({d});
  }
  m.final_ln = {Tensor::full({d}, 1.0), Tensor({d})};
  return m;
}

namespace {

// [S x S x 3] -> [n_patches x patch_dim], patches in row-major grid order,
// pixels flattened (dy, dx, channel).
Tensor patchify(const Tensor& image, std::size_t patch_size) {
  const std::size_t s = image.extent(0), g = s / patch_size;
  Tensor out({g * g, patch_size * patch_size * 3});
  for (std::size_t pr = 0; pr < g; ++pr) {
    for (std::size_t pc = 0; pc < g; ++pc) {
      double* dst = out.data() + (pr * g + pc) * out.extent(1);
      for (std::size_t dy = 0; dy < patch_size; ++dy) {
        for (std::size_t dx = 0; dx < patch_size; ++dx) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            *dst++ = image(pr * patch_size + dy, pc * patch_size + dx, ch);
          }
        }
      }
    }
  }
  return out;
}

Tensor block_forward(const VitModel& m, const BlockWeights& b, const Tensor& x) {
  AttentionConfig attn_cfg{m.config.d_model, m.config.n_heads, m.config.normalizer,
                           EntmaxSolver::kSort};
  Tensor h = layer_norm(x, b.ln1.gamma, b.ln1.beta, m.config.ln_eps);
  Tensor out = add(x, multi_head_attend(attn_cfg, b.attn, h).y);
  h = layer_norm(out, b.ln2.gamma, b.ln2.beta, m.config.ln_eps);
  h = affine(h, b.mlp.w1, b.mlp.b1);
  h = gelu(h);
  h = affine(h, b.mlp.w2, b.mlp.b2);
  return add(out, h);
}

}  // namespace

LayerFeatures forward_features(const VitModel& model, const Tensor& image) {
  const VitConfig& cfg = model.config;
  if (image.rank() != 3 || image.extent(0) != cfg.image_size ||
      image.extent(1) != cfg.image_size || image.extent(2) != 3) {
    throw ShapeError("forward_features: image " + shape_to_string(image.shape()) +
                     " does not match config [" + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + "x3]");
  }
  if (!all_finite(image)) throw ValidationError("forward_features: image has non-finite values");

  const std::size_t d = cfg.d_model, t = cfg.n_tokens();
  Tensor patches = affine(patchify(image, cfg.patch_size), model.patch_embed_w,
                          model.patch_embed_b);

  Tensor x({t, d});
  for (std::size_t j = 0; j < d; ++j) x(0, j) = model.cls_token[j];
  for (std::size_t r = 0; r < cfg.n_registers; ++r) {
    for (std::size_t j = 0; j < d; ++j) x(1 + r, j) = model.register_tokens(r, j);
  }
  const std::size_t patch_offset = 1 + cfg.n_registers;
  for (std::size_t p = 0; p < cfg.n_patches(); ++p) {
    for (std::size_t j = 0; j < d; ++j) {
      // Positional embeddings are patch-only; CLS and registers carry none.
      x(patch_offset + p, j) = patches(p, j) + model.pos_embed(p, j);
    }
  }

  LayerFeatures f;
  f.config = cfg;
  f.tokens = TokenMap{cfg.n_registers, cfg.grid(), cfg.grid()};
  f.layers.reserve(cfg.n_layers);
  for (const BlockWeights& b : model.blocks) {
    x = block_forward(model, b, x);
    f.layers.push_back(x);
  }
  f.final_ln = layer_norm(x, model.final_ln.gamma, model.final_ln.beta, cfg.ln_eps);
  return f;
}

nlohmann::json config_to_json(const VitConfig& cfg) {
  return {{"image_size", cfg.image_size}, {"patch_size", cfg.patch_size},
          {"d_model", cfg.d_model},       {"n_heads", cfg.n_heads},
          {"n_layers", cfg.n_layers},     {"mlp_ratio", cfg.mlp_ratio},
          {"n_registers", cfg.n_registers},
          {"normalizer", normalizer_name(cfg.normalizer)},
          {"ln_eps", cfg.ln_eps}};
}

VitConfig config_from_json(const nlohmann::json& j) {
  VitConfig cfg;
  try {
    cfg.image_size = j.at("image_size").get<std::size_t>();
    cfg.patch_size = j.at("patch_size").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    cfg.n_registers = j.at("n_registers").get<std::size_t>();
    cfg.normalizer = normalizer_from_name(j.at("normalizer").get<std::string>());
    cfg.ln_eps = j.at("ln_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model manifest: bad config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

// Manifest order for model weights; the loader checks names and shapes
// against this list exactly.
std::vector<std::pair<std::string, std::vector<std::size_t>>> model_schema(const VitConfig& cfg) {
  const std::size_t d = cfg.d_model, hidden = cfg.mlp_ratio * d;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> schema;
  schema.emplace_back("patch_embed.weight", std::vector<std::size_t>{cfg.patch_dim(), d});
  schema.emplace_back("patch_embed.bias", std::vector<std::size_t>{d});
  schema.emplace_back("cls_token", std::vector<std::size_t>{d});
  schema.emplace_back("register_tokens", std::vector<std::size_t>{cfg.n_registers, d});
  schema.emplace_back("pos_embed", std::vector<std::size_t>{cfg.n_patches(), d});
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    schema.emplace_back(p + "ln1.gamma", std::vector<std::size_t>{d});
    schema.emplace_back(p + "ln1.beta", std::vector<std::size_t>{d});
    schema.emplace_back(p + "attn.wq", std::vector<std::size_t>{d, d});
    schema.emplace_back(p + "attn.bq", std::vector<std::size_t>{d});
    schema.emplace_back(p + "attn.wk", std::vector<std::size_t>{d, d});
    schema.emplace_back(p + "attn.bk", std::vector<std::size_t>{d});
    schema.emplace_back(p + "attn.wv", std::vector<std::size_t>{d, d});
    schema.emplace_back(p + "attn.bv", std::vector<std::size_t>{d});
    schema.emplace_back(p + "attn.wo", std::vector<std::size_t>{d, d});
    schema.emplace_back(p + "attn.bo", std::vector<std::size_t>{d});
    schema.emplace_back(p + "ln2.gamma", std::vector<std::size_t>{d});
    schema.emplace_back(p + "ln2.beta", std::vector<std::size_t>{d});
    schema.emplace_back(p + "mlp.w1", std::vector<std::size_t>{d, hidden});
    schema.emplace_back(p + "mlp.b1", std::vector<std::size_t>{hidden});
    schema.emplace_back(p + "mlp.w2", std::vector<std::size_t>{hidden, d});
    schema.emplace_back(p + "mlp.b2", std::vector<std::size_t>{d});
  }
  schema.emplace_back("final_ln.gamma", std::vector<std::size_t>{d});
  schema.emplace_back("final_ln.beta", std::vector<std::size_t>{d});
  return schema;
}

template <typename Model, typename TensorPtr>
std::vector<TensorPtr> model_tensor_slots_impl(Model& m) {
  std::vector<TensorPtr> slots{&m.patch_embed_w, &m.patch_embed_b, &m.cls_token,
                               &m.register_tokens, &m.pos_embed};
  for (auto& b : m.blocks) {
    slots.push_back(&b.ln1.gamma);
    slots.push_back(&b.ln1.beta);
    slots.push_back(&b.attn.w_q);
    slots.push_back(&b.attn.b_q);
    slots.push_back(&b.attn.w_k);
    slots.push_back(&b.attn.b_k);
    slots.push_back(&b.attn.w_v);
    slots.push_back(&b.attn.b_v);
    slots.push_back(&b.attn.w_o);
    slots.push_back(&b.attn.b_o);
    slots.push_back(&b.ln2.gamma);
    slots.push_back(&b.ln2.beta);
    slots.push_back(&b.mlp.w1);
    slots.push_back(&b.mlp.b1);
    slots.push_back(&b.mlp.w2);
    slots.push_back(&b.mlp.b2);
  }
  slots.push_back(&m.final_ln.gamma);
  slots.push_back(&m.final_ln.beta);
  return slots;
}

std::vector<Tensor*> model_tensor_slots(VitModel& m) {
  return model_tensor_slots_impl<VitModel, Tensor*>(m);
}

std::vector<const Tensor*> model_tensor_slots(const VitModel& m) {
  return model_tensor_slots_impl<const VitModel, const Tensor*>(m);
}

}  // namespace

void save_model(const VitModel& model, const std::string& path) {
  nlohmann::json meta{{"kind", "model"}, {"config", config_to_json(model.config)}};
  const auto schema = model_schema(model.config);
  auto slots = model_tensor_slots(model);
  std::vector<NamedTensor> tensors;
  tensors.reserve(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    tensors.push_back(NamedTensor{schema[i].first, *slots[i], Dtype::kF32});
  }
  write_container(path, meta, tensors);
}

VitModel load_model(const std::string& path) {
  Container c = read_container(path);
  if (!c.meta.contains("kind") || c.meta["kind"] != "model" || !c.meta.contains("config")) {
    throw IoError("model manifest: '" + path + "' is not a model container");
  }
  VitModel m;
  m.config = config_from_json(c.meta["config"]);
  m.blocks.resize(m.config.n_layers);
  const auto schema = model_schema(m.config);
  if (c.tensors.size() != schema.size()) {
    throw IoError("model manifest: expected " + std::to_string(schema.size()) + " tensors, found " +
                  std::to_string(c.tensors.size()));
  }
  auto slots = model_tensor_slots(m);
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const NamedTensor& t = c.tensors[i];
    if (t.name != schema[i].first) {
      throw IoError("model manifest: tensor " + std::to_string(i) + " is '" + t.name +
                    "', expected '" + schema[i].first + "'");
    }
    if (t.tensor.shape() != schema[i].second) {
      throw IoError("model manifest: tensor '" + t.name + "' has shape " +
                    shape_to_string(t.tensor.shape()) + ", expected " +
                    shape_to_string(schema[i].second));
    }
    *slots[i] = t.tensor;
  }
  return m;
}

std::vector<std::size_t> evenly_spaced_layers(std::size_t n_layers) {
  if (n_layers < 4) {
    throw ValidationError("evenly_spaced_layers: need at least 4 layers, have " +
                          std::to_string(n_layers));
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 1; k <= 4; ++k) {
    out.push_back((n_layers * k + 3) / 4);  // ceil(n*k/4)
  }
  return out;
}

Tensor extract_layer_set(const LayerFeatures& features, LayerSetMode mode, bool concat_cls) {
  const TokenMap& tok = features.tokens;
  const std::size_t n_patches = tok.n_patches(), off = tok.patch_offset();
  const std::size_t d = features.config.d_model;

  const auto patch_block = [&](const Tensor& tokens) {
    Tensor out({n_patches, d});
    for (std::size_t p = 0; p < n_patches; ++p) {
      std::copy(tokens.data() + (off + p) * d, tokens.data() + (off + p + 1) * d,
                out.data() + p * d);
    }
    return out;
  };
  const auto cls_block = [&](const Tensor& tokens) {
    Tensor out({n_patches, d});
    for (std::size_t p = 0; p < n_patches; ++p) {
      std::copy(tokens.data(), tokens.data() + d, out.data() + p * d);
    }
    return out;
  };

  std::vector<Tensor> parts;
  if (mode == LayerSetMode::kFinal) {
    parts.push_back(patch_block(features.final_ln));
    if (concat_cls) parts.push_back(cls_block(features.final_ln));
  } else {
    const auto layer_ids = evenly_spaced_layers(features.layers.size());
    for (std::size_t id : layer_ids) parts.push_back(patch_block(features.layer(id)));
    if (concat_cls) {
      for (std::size_t id : layer_ids) parts.push_back(cls_block(features.layer(id)));
    }
  }
  return concat(parts, 1);
}

void save_features(const std::string& path, const std::vector<LayerFeatures>& batch) {
  if (batch.empty()) throw ValidationError("save_features: empty batch");
  const VitConfig& cfg = batch.front().config;
  nlohmann::json meta{{"kind", "features"},
                      {"config", config_to_json(cfg)},
                      {"n_images", batch.size()}};
  std::vector<NamedTensor> tensors;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    char img[16];
    std::snprintf(img, sizeof(img), "image%04zu", i);
    const LayerFeatures& f = batch[i];
    if (f.layers.size() != cfg.n_layers) {
      throw ValidationError("save_features: inconsistent layer counts in batch");
    }
    for (std::size_t l = 0; l < f.layers.size(); ++l) {
      char name[48];
      std::snprintf(name, sizeof(name), "%s.layer%02zu", img, l + 1);
      tensors.push_back(NamedTensor{name, f.layers[l], Dtype::kF64});
    }
    tensors.push_back(NamedTensor{std::string(img) + ".final", f.final_ln, Dtype::kF64});
  }
  write_container(path, meta, tensors);
}

std::vector<LayerFeatures> load_features(const std::string& path) {
  Container c = read_container(path);
  if (!c.meta.contains("kind") || c.meta["kind"] != "features") {
    throw IoError("features: '" + path + "' is not a feature container");
  }
  const VitConfig cfg = config_from_json(c.meta.at("config"));
  const std::size_t n_images = c.meta.at("n_images").get<std::size_t>();
  const std::size_t per_image = cfg.n_layers + 1;
  if (c.tensors.size() != n_images * per_image) {
    throw IoError("features: manifest lists " + std::to_string(c.tensors.size()) +
                  " tensors, expected " + std::to_string(n_images * per_image));
  }
  std::vector<LayerFeatures> batch(n_images);
  const std::vector<std::size_t> tok_shape{cfg.n_tokens(), cfg.d_model};
  for (std::size_t i = 0; i < n_images; ++i) {
    LayerFeatures& f = batch[i];
    f.config = cfg;
    f.tokens = TokenMap{cfg.n_registers, cfg.grid(), cfg.grid()};
    for (std::size_t l = 0; l < per_image; ++l) {
      const NamedTensor& t = c.tensors[i * per_image + l];
      if (t.tensor.shape() != tok_shape) {
        throw IoError("features: tensor '" + t.name + "' has shape " +
                      shape_to_string(t.tensor.shape()) + ", expected " +
                      shape_to_string(tok_shape));
      }
      if (l < cfg.n_layers) {
        f.layers.push_back(t.tensor);
      } else {
        f.final_ln = t.tensor;
      }
    }
  }
  return batch;
}

std::string normalizer_name(NormalizerKind kind) {
  return kind == NormalizerKind::kSoftmax ? "softmax" : "entmax15";
}

NormalizerKind normalizer_from_name(const std::string& name) {
  if (name == "softmax") return NormalizerKind::kSoftmax;
  if (name == "entmax15") return NormalizerKind::kEntmax15;
  throw ValidationError("unknown normalizer '" + name + "' (softmax|entmax15)");
}

}  // namespace savt

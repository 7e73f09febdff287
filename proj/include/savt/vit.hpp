#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "savt/attention.hpp"
#include "savt/rng.hpp"
#include "savt/tensor.hpp"

namespace savt {

struct VitConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t d_model = 384;
  std::size_t n_heads = 6;
  std::size_t n_layers = 12;
  std::size_t mlp_ratio = 4;
  std::size_t n_registers = 0;
  NormalizerKind normalizer = NormalizerKind::kSoftmax;
  double ln_eps = 1e-6;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t n_patches() const { return grid() * grid(); }
  std::size_t n_tokens() const { return 1 + n_registers + n_patches(); }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  void validate() const;

  // d=16, 2 heads, 2 layers, 32 px image, 8 px patches; used throughout tests.
  static VitConfig tiny(NormalizerKind normalizer = NormalizerKind::kSoftmax);
  // ViT-S/16: 384/6/12 on 224 px images.
  static VitConfig vit_s(NormalizerKind normalizer = NormalizerKind::kSoftmax);
};

struct LayerNormParams {
  Tensor gamma, beta;
};

struct MlpWeights {
  Tensor w1, b1, w2, b2;
};

struct BlockWeights {
  LayerNormParams ln1;
  AttentionWeights attn;
  LayerNormParams ln2;
  MlpWeights mlp;
};

// Pre-norm ViT: LN -> attention -> residual, LN -> MLP -> residual.
struct VitModel {
  VitConfig config;
  Tensor patch_embed_w;    // [patch_dim x d_model]
  Tensor patch_embed_b;    // [d_model]
  Tensor cls_token;        // [d_model]
  Tensor register_tokens;  // [n_registers x d_model]
  Tensor pos_embed;        // [n_patches x d_model], patch tokens only
  std::vector<BlockWeights> blocks;
  LayerNormParams final_ln;

  std::size_t parameter_count() const;
};

// Token layout of a forward pass: CLS first, then registers, then patches in
// row-major grid order.
struct TokenMap {
  std::size_t n_registers = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t cls() const { return 0; }
  std::size_t patch_offset() const { return 1 + n_registers; }
  std::size_t n_patches() const { return rows * cols; }
  std::size_t patch_index(std::size_t r, std::size_t c) const {
    return patch_offset() + r * cols + c;
  }
  std::size_t n_tokens() const { return patch_offset() + n_patches(); }
};

struct LayerFeatures {
  VitConfig config;
  TokenMap tokens;
  std::vector<Tensor> layers;  // post-block tokens per layer, [T x d_model]
  Tensor final_ln;             // [T x d_model]

  // 1-based layer access matching the layer numbering used in reports.
  const Tensor& layer(std::size_t one_based) const;
};

// Truncated-normal (sigma 0.02, clipped at 2 sigma) weight init, zero biases,
// unit layer-norm gains. Deterministic in the seed.
VitModel init_model(const VitConfig& cfg, Rng& rng);

// image is [H x W x 3] with finite values; the caller normalizes pixels.
LayerFeatures forward_features(const VitModel& model, const Tensor& image);

void save_model(const VitModel& model, const std::string& path);
VitModel load_model(const std::string& path);

enum class LayerSetMode { kFinal, kFourEvenlySpaced };

// Probe input assembly. kFinal: final-LN patch tokens, optionally with the
// final-LN CLS feature appended to every row. kFourEvenlySpaced: pre-final-LN
// patches of layers ceil(n_layers * k / 4), k = 1..4, concatenated across
// layers, with those layers' CLS features appended when concat_cls is set.
// Register tokens are never included.
Tensor extract_layer_set(const LayerFeatures& features, LayerSetMode mode, bool concat_cls);

// The documented "four evenly spaced" rule: 1-based indices ceil(n*k/4).
std::vector<std::size_t> evenly_spaced_layers(std::size_t n_layers);

// Feature dumps share the model container; tensors are stored per image and
// layer in f64 so round trips are exact.
void save_features(const std::string& path, const std::vector<LayerFeatures>& batch);
std::vector<LayerFeatures> load_features(const std::string& path);

std::string normalizer_name(NormalizerKind kind);
NormalizerKind normalizer_from_name(const std::string& name);

nlohmann::json config_to_json(const VitConfig& cfg);
VitConfig config_from_json(const nlohmann::json& j);

}  // namespace savt

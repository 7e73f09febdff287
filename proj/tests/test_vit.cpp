#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "savt/ops.hpp"
#include "savt/vit.hpp"

using namespace savt;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "savt-vit-tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Tensor random_image(Rng& rng, std::size_t s) {
  Tensor img({s, s, 3});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  return img;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

VitConfig micro_config(std::size_t layers = 1) {
  VitConfig cfg;
  cfg.image_size = 4;
  cfg.patch_size = 2;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = layers;
  return cfg;
}

}  // namespace

TEST_CASE("config validation and token arithmetic") {
  VitConfig vits = VitConfig::vit_s();
  CHECK(vits.n_tokens() == 197);
  vits.n_registers = 4;
  CHECK(vits.n_tokens() == 201);

  VitConfig bad = VitConfig::tiny();
  bad.patch_size = 7;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  VitConfig bad_heads = VitConfig::tiny();
  bad_heads.n_heads = 3;
  CHECK_THROWS_AS(bad_heads.validate(), ValidationError);
}

TEST_CASE("init is deterministic in the seed") {
  const VitConfig cfg = VitConfig::tiny();
  Rng r1(99), r2(99), r3(100);
  const VitModel a = init_model(cfg, r1);
  const VitModel b = init_model(cfg, r2);
  const VitModel c = init_model(cfg, r3);
  CHECK(bitwise_equal(a.patch_embed_w, b.patch_embed_w));
  CHECK(bitwise_equal(a.pos_embed, b.pos_embed));
  CHECK(bitwise_equal(a.blocks[0].attn.w_q, b.blocks[0].attn.w_q));
  CHECK(bitwise_equal(a.blocks[1].mlp.w2, b.blocks[1].mlp.w2));
  CHECK(!bitwise_equal(a.patch_embed_w, c.patch_embed_w));
}

TEST_CASE("parameter count matches the closed-form count") {
  // d=8, 2 heads, 1 layer, 4x4 image, 2 px patches
  const VitConfig cfg = micro_config();
  Rng rng(1);
  const VitModel m = init_model(cfg, rng);

  const std::size_t d = 8, patch_dim = 2 * 2 * 3, n_patches = 4, hidden = 4 * d;
  std::size_t expected = 0;
  expected += patch_dim * d + d;      // patch embedding
  expected += d;                      // cls token
  expected += 0;                      // registers
  expected += n_patches * d;          // positional embeddings
  expected += 2 * d;                  // ln1
  expected += 4 * d * d + 4 * d;      // attention projections and biases
  expected += 2 * d;                  // ln2
  expected += d * hidden + hidden;    // mlp in
  expected += hidden * d + d;         // mlp out
  expected += 2 * d;                  // final ln
  CHECK(m.parameter_count() == expected);

  // registers add n_registers * d
  VitConfig reg_cfg = cfg;
  reg_cfg.n_registers = 4;
  Rng rng2(1);
  const VitModel mr = init_model(reg_cfg, rng2);
  CHECK(mr.parameter_count() == expected + 4 * d);
}

TEST_CASE("forward is deterministic and validates input") {
  const VitConfig cfg = VitConfig::tiny();
  Rng rng(2);
  const VitModel m = init_model(cfg, rng);
  Rng img_rng(3);
  const Tensor image = random_image(img_rng, cfg.image_size);
  const LayerFeatures f1 = forward_features(m, image);
  const LayerFeatures f2 = forward_features(m, image);
  REQUIRE(f1.layers.size() == cfg.n_layers);
  for (std::size_t l = 0; l < f1.layers.size(); ++l) {
    CHECK(f1.layers[l].shape() == std::vector<std::size_t>{cfg.n_tokens(), cfg.d_model});
    CHECK(bitwise_equal(f1.layers[l], f2.layers[l]));
  }
  CHECK(bitwise_equal(f1.final_ln, f2.final_ln));

  CHECK_THROWS_AS(forward_features(m, Tensor({8, 8, 3})), ShapeError);
  Tensor bad = image;
  bad[0] = std::nan("");
  CHECK_THROWS_AS(forward_features(m, bad), ValidationError);
}

TEST_CASE("identical tokens stay identical through every layer") {
  // zero image, zero positional embeddings: all patch tokens are equal, and
  // the blocks preserve that symmetry
  const VitConfig cfg = VitConfig::tiny();
  Rng rng(4);
  VitModel m = init_model(cfg, rng);
  m.pos_embed = Tensor({cfg.n_patches(), cfg.d_model});
  const Tensor zero_image({cfg.image_size, cfg.image_size, 3});
  const LayerFeatures f = forward_features(m, zero_image);
  const std::size_t off = f.tokens.patch_offset();
  for (const Tensor& tokens : f.layers) {
    for (std::size_t p = 1; p < cfg.n_patches(); ++p) {
      for (std::size_t j = 0; j < cfg.d_model; ++j) {
        CHECK(tokens(off + p, j) == tokens(off, j));
      }
    }
  }
}

TEST_CASE("tiny forward matches a composition oracle over public ops") {
  const VitConfig cfg = micro_config();
  Rng rng(5);
  const VitModel m = init_model(cfg, rng);
  Rng img_rng(6);
  const Tensor image = random_image(img_rng, cfg.image_size);
  const LayerFeatures got = forward_features(m, image);

  // oracle: assemble the same forward pass step by step
  const std::size_t g = cfg.grid(), ps = cfg.patch_size, d = cfg.d_model;
  Tensor patches({g * g, cfg.patch_dim()});
  for (std::size_t pr = 0; pr < g; ++pr) {
    for (std::size_t pc = 0; pc < g; ++pc) {
      std::size_t idx = 0;
      for (std::size_t dy = 0; dy < ps; ++dy) {
        for (std::size_t dx = 0; dx < ps; ++dx) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            patches(pr * g + pc, idx++) = image(pr * ps + dy, pc * ps + dx, ch);
          }
        }
      }
    }
  }
  Tensor x({cfg.n_tokens(), d});
  const Tensor embedded = affine(patches, m.patch_embed_w, m.patch_embed_b);
  for (std::size_t j = 0; j < d; ++j) x(0, j) = m.cls_token[j];
  for (std::size_t p = 0; p < g * g; ++p) {
    for (std::size_t j = 0; j < d; ++j) x(1 + p, j) = embedded(p, j) + m.pos_embed(p, j);
  }
  const AttentionConfig acfg{d, cfg.n_heads, cfg.normalizer, EntmaxSolver::kSort};
  const BlockWeights& blk = m.blocks[0];
  Tensor h = layer_norm(x, blk.ln1.gamma, blk.ln1.beta, cfg.ln_eps);
  x = add(x, multi_head_attend(acfg, blk.attn, h).y);
  h = layer_norm(x, blk.ln2.gamma, blk.ln2.beta, cfg.ln_eps);
  h = affine(h, blk.mlp.w1, blk.mlp.b1);
  h = gelu(h);
  h = affine(h, blk.mlp.w2, blk.mlp.b2);
  x = add(x, h);
  const Tensor final_ln = layer_norm(x, m.final_ln.gamma, m.final_ln.beta, cfg.ln_eps);

  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(got.layers[0][i] - x[i]) < 1e-12);
    CHECK(std::abs(got.final_ln[i] - final_ln[i]) < 1e-12);
  }
}

TEST_CASE("switching the normalizer changes nothing when logits are all equal") {
  Rng r1(7), r2(7);
  VitModel soft = init_model(VitConfig::tiny(NormalizerKind::kSoftmax), r1);
  VitModel ent = init_model(VitConfig::tiny(NormalizerKind::kEntmax15), r2);
  for (auto* m : {&soft, &ent}) {
    for (BlockWeights& b : m->blocks) {
      b.attn.w_q = Tensor({m->config.d_model, m->config.d_model});
    }
  }
  Rng img_rng(8);
  const Tensor image = random_image(img_rng, soft.config.image_size);
  const LayerFeatures fs = forward_features(soft, image);
  const LayerFeatures fe = forward_features(ent, image);
  for (std::size_t l = 0; l < fs.layers.size(); ++l) {
    CHECK(bitwise_equal(fs.layers[l], fe.layers[l]));
  }
  CHECK(bitwise_equal(fs.final_ln, fe.final_ln));
}

TEST_CASE("shuffling patches with their positional embeddings leaves CLS unchanged") {
  const VitConfig cfg = VitConfig::tiny();
  Rng rng(9);
  const VitModel base = init_model(cfg, rng);
  Rng img_rng(10);
  const Tensor image = random_image(img_rng, cfg.image_size);

  const std::size_t g = cfg.grid(), ps = cfg.patch_size;
  std::vector<std::size_t> perm(cfg.n_patches());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 7 + 3) % perm.size();

  // image2 patch p = image patch perm[p]; pos2 row p = pos row perm[p]
  Tensor shuffled({cfg.image_size, cfg.image_size, 3});
  for (std::size_t p = 0; p < perm.size(); ++p) {
    const std::size_t sr = (perm[p] / g) * ps, sc = (perm[p] % g) * ps;
    const std::size_t dr = (p / g) * ps, dc = (p % g) * ps;
    for (std::size_t dy = 0; dy < ps; ++dy) {
      for (std::size_t dx = 0; dx < ps; ++dx) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          shuffled(dr + dy, dc + dx, ch) = image(sr + dy, sc + dx, ch);
        }
      }
    }
  }
  VitModel moved = base;
  for (std::size_t p = 0; p < perm.size(); ++p) {
    for (std::size_t j = 0; j < cfg.d_model; ++j) {
      moved.pos_embed(p, j) = base.pos_embed(perm[p], j);
    }
  }
  const LayerFeatures f1 = forward_features(base, image);
  const LayerFeatures f2 = forward_features(moved, shuffled);
  for (std::size_t l = 0; l < f1.layers.size(); ++l) {
    for (std::size_t j = 0; j < cfg.d_model; ++j) {
      CHECK(std::abs(f1.layers[l](0, j) - f2.layers[l](0, j)) < 1e-9);
    }
  }
}

TEST_CASE("save -> load -> save produces byte-identical files") {
  Rng rng(11);
  const VitModel m = init_model(VitConfig::tiny(NormalizerKind::kEntmax15), rng);
  const fs::path a = temp_file("model_a.savt"), b = temp_file("model_b.savt");
  save_model(m, a.string());
  const VitModel loaded = load_model(a.string());
  save_model(loaded, b.string());
  CHECK(slurp(a) == slurp(b));
  CHECK(loaded.config.normalizer == NormalizerKind::kEntmax15);
}

TEST_CASE("save/load preserves forward outputs at stored precision") {
  Rng rng(12);
  const VitModel m = init_model(VitConfig::tiny(), rng);
  const fs::path a = temp_file("model_rt.savt"), b = temp_file("model_rt2.savt");
  save_model(m, a.string());
  const VitModel first = load_model(a.string());
  save_model(first, b.string());
  const VitModel second = load_model(b.string());
  Rng img_rng(13);
  const Tensor image = random_image(img_rng, m.config.image_size);
  const LayerFeatures f1 = forward_features(first, image);
  const LayerFeatures f2 = forward_features(second, image);
  for (std::size_t l = 0; l < f1.layers.size(); ++l) {
    CHECK(bitwise_equal(f1.layers[l], f2.layers[l]));
  }
  CHECK(bitwise_equal(f1.final_ln, f2.final_ln));
}

TEST_CASE("register tokens round-trip and extend the token count") {
  VitConfig cfg = VitConfig::tiny();
  cfg.n_registers = 4;
  Rng rng(14);
  const VitModel m = init_model(cfg, rng);
  const fs::path p = temp_file("model_reg.savt");
  save_model(m, p.string());
  const VitModel loaded = load_model(p.string());
  CHECK(loaded.config.n_registers == 4);
  CHECK(loaded.config.n_tokens() == 1 + 4 + 16);
  CHECK(loaded.register_tokens.shape() == std::vector<std::size_t>{4, cfg.d_model});

  Rng img_rng(15);
  const LayerFeatures f = forward_features(loaded, random_image(img_rng, cfg.image_size));
  CHECK(f.layers[0].extent(0) == 21);
  CHECK(f.tokens.patch_offset() == 5);
}

TEST_CASE("load rejects bad magic, corrupted manifests, truncation") {
  Rng rng(16);
  const VitModel m = init_model(VitConfig::tiny(), rng);
  const fs::path good = temp_file("good.savt");
  save_model(m, good.string());
  const std::string bytes = slurp(good);

  const fs::path bad_magic = temp_file("bad_magic.savt");
  {
    std::string copy = bytes;
    copy[0] = 'X';
    std::ofstream f(bad_magic, std::ios::binary);
    f << copy;
  }
  CHECK_THROWS_AS(load_model(bad_magic.string()), IoError);

  const fs::path bad_manifest = temp_file("bad_manifest.savt");
  {
    // corrupt a shape digit inside the JSON manifest
    std::string copy = bytes;
    const std::string needle = "\"shape\":[";
    const std::size_t at = copy.find(needle);
    REQUIRE(at != std::string::npos);
    copy[at + needle.size()] = '9';
    std::ofstream f(bad_manifest, std::ios::binary);
    f << copy;
  }
  CHECK_THROWS_AS(load_model(bad_manifest.string()), IoError);

  const fs::path truncated = temp_file("truncated.savt");
  {
    std::ofstream f(truncated, std::ios::binary);
    f << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(load_model(truncated.string()), IoError);

  CHECK_THROWS_AS(load_model(temp_file("missing.savt").string()), IoError);
}

TEST_CASE("evenly spaced layer rule") {
  CHECK(evenly_spaced_layers(12) == std::vector<std::size_t>{3, 6, 9, 12});
  CHECK(evenly_spaced_layers(4) == std::vector<std::size_t>{1, 2, 3, 4});
  // enumeration oracle for ceil(n*k/4)
  for (std::size_t n = 4; n <= 24; ++n) {
    const auto got = evenly_spaced_layers(n);
    for (std::size_t k = 1; k <= 4; ++k) {
      std::size_t ceil_nk = 0;
      while (ceil_nk * 4 < n * k) ++ceil_nk;
      CHECK(got[k - 1] == ceil_nk);
    }
    CHECK(got.back() == n);
  }
  CHECK_THROWS_AS(evenly_spaced_layers(3), ValidationError);
}

TEST_CASE("extract_layer_set widths and CLS broadcast") {
  VitConfig cfg = micro_config(4);
  Rng rng(17);
  const VitModel m = init_model(cfg, rng);
  Rng img_rng(18);
  const LayerFeatures f = forward_features(m, random_image(img_rng, cfg.image_size));
  const std::size_t d = cfg.d_model, np = cfg.n_patches();

  const Tensor fin = extract_layer_set(f, LayerSetMode::kFinal, false);
  CHECK(fin.shape() == std::vector<std::size_t>{np, d});

  const Tensor fin_cls = extract_layer_set(f, LayerSetMode::kFinal, true);
  CHECK(fin_cls.shape() == std::vector<std::size_t>{np, 2 * d});
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(fin_cls(p, d + j) == fin_cls(0, d + j));     // same CLS in every row
      CHECK(fin_cls(p, d + j) == f.final_ln(0, j));      // final-LN CLS feature
      CHECK(fin_cls(p, j) == f.final_ln(1 + p, j));      // final-LN patches
    }
  }

  const Tensor four = extract_layer_set(f, LayerSetMode::kFourEvenlySpaced, false);
  CHECK(four.shape() == std::vector<std::size_t>{np, 4 * d});
  const Tensor four_cls = extract_layer_set(f, LayerSetMode::kFourEvenlySpaced, true);
  CHECK(four_cls.shape() == std::vector<std::size_t>{np, 8 * d});
  // pre-final-LN patches of layers {1,2,3,4}
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(four(p, j) == f.layers[0](1 + p, j));
      CHECK(four(p, 3 * d + j) == f.layers[3](1 + p, j));
    }
  }

  VitConfig small = micro_config(2);
  Rng rng2(19);
  const VitModel m2 = init_model(small, rng2);
  Rng img_rng2(20);
  const LayerFeatures f2 = forward_features(m2, random_image(img_rng2, small.image_size));
  CHECK_THROWS_AS(extract_layer_set(f2, LayerSetMode::kFourEvenlySpaced, false),
                  ValidationError);
}

TEST_CASE("register tokens are excluded from extracted patch features") {
  VitConfig cfg = VitConfig::tiny();
  cfg.n_registers = 4;
  Rng rng(21);
  const VitModel m = init_model(cfg, rng);
  Rng img_rng(22);
  const LayerFeatures f = forward_features(m, random_image(img_rng, cfg.image_size));
  const Tensor fin = extract_layer_set(f, LayerSetMode::kFinal, false);
  CHECK(fin.extent(0) == cfg.n_patches());
  for (std::size_t p = 0; p < cfg.n_patches(); ++p) {
    for (std::size_t j = 0; j < cfg.d_model; ++j) {
      CHECK(fin(p, j) == f.final_ln(5 + p, j));
    }
  }
}

TEST_CASE("feature dumps round-trip exactly") {
  const VitConfig cfg = VitConfig::tiny(NormalizerKind::kEntmax15);
  Rng rng(23);
  const VitModel m = init_model(cfg, rng);
  Rng img_rng(24);
  std::vector<LayerFeatures> batch;
  for (int i = 0; i < 3; ++i) {
    batch.push_back(forward_features(m, random_image(img_rng, cfg.image_size)));
  }
  const fs::path p = temp_file("features.savt");
  save_features(p.string(), batch);
  const auto loaded = load_features(p.string());
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      CHECK(bitwise_equal(loaded[i].layers[l], batch[i].layers[l]));
    }
    CHECK(bitwise_equal(loaded[i].final_ln, batch[i].final_ln));
  }
  CHECK(loaded.front().config.normalizer == NormalizerKind::kEntmax15);
}

#include "savt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "savt/rng.hpp"

namespace savt {

namespace {

// Two-color checker texture per foreground class; classes differ in hue.
void fill_foreground(Tensor& img, const BoxAnnotation& box, std::size_t cls, Rng& rng) {
  const double base_r = cls % 2 == 0 ? 0.85 : 0.15;
  const double base_g = 0.25 + 0.5 * static_cast<double>(cls % 3) / 2.0;
  const double base_b = cls % 2 == 0 ? 0.2 : 0.9;
  for (std::size_t y = static_cast<std::size_t>(box.y0); y < static_cast<std::size_t>(box.y1);
       ++y) {
    for (std::size_t x = static_cast<std::size_t>(box.x0); x < static_cast<std::size_t>(box.x1);
         ++x) {
      const bool cell = ((x / 2) + (y / 2)) % 2 == 0;
      const double jitter = 0.04 * (rng.uniform() - 0.5);
      img(y, x, 0) = std::clamp(base_r * (cell ? 1.0 : 0.55) + jitter, 0.0, 1.0);
      img(y, x, 1) = std::clamp(base_g * (cell ? 1.0 : 0.55) + jitter, 0.0, 1.0);
      img(y, x, 2) = std::clamp(base_b * (cell ? 1.0 : 0.55) + jitter, 0.0, 1.0);
    }
  }
}

}  // namespace

std::vector<SyntheticSample> make_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.image_size == 0 || cfg.patch_size == 0 || cfg.image_size % cfg.patch_size != 0) {
    throw ValidationError("synthetic: image_size must be a positive multiple of patch_size");
  }
  if (cfg.n_images == 0 || cfg.n_foreground_classes == 0) {
    throw ValidationError("synthetic: need at least one image and one foreground class");
  }
  const std::size_t s = cfg.image_size, g = s / cfg.patch_size;
  Rng rng(cfg.seed);
  std::vector<SyntheticSample> out;
  out.reserve(cfg.n_images);

  for (std::size_t i = 0; i < cfg.n_images; ++i) {
    SyntheticSample sample;
    char id[16];
    std::snprintf(id, sizeof(id), "img%04zu", i);
    sample.id = id;
    sample.image_label = rng.below(cfg.n_foreground_classes);

    // Gradient background with small per-pixel noise.
    sample.image = Tensor({s, s, 3});
    const double tint = 0.3 + 0.3 * rng.uniform();
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const double grad = 0.25 + 0.4 * static_cast<double>(y) / static_cast<double>(s);
        sample.image(y, x, 0) = std::clamp(grad + 0.03 * (rng.uniform() - 0.5), 0.0, 1.0);
        sample.image(y, x, 1) = std::clamp(grad * tint + 0.03 * (rng.uniform() - 0.5), 0.0, 1.0);
        sample.image(y, x, 2) = std::clamp(0.6 - grad * 0.4 + 0.03 * (rng.uniform() - 0.5), 0.0,
                                           1.0);
      }
    }

    // Foreground rectangle: between 1/4 and 5/8 of the image per side.
    const auto span = [&](std::size_t lo, std::size_t hi) {
      return lo + rng.below(hi - lo + 1);
    };
    const std::size_t bw = span(s / 4, (5 * s) / 8);
    const std::size_t bh = span(s / 4, (5 * s) / 8);
    const std::size_t bx = rng.below(s - bw + 1);
    const std::size_t by = rng.below(s - bh + 1);
    sample.box = BoxAnnotation{sample.id, static_cast<double>(bx), static_cast<double>(by),
                               static_cast<double>(bx + bw), static_cast<double>(by + bh)};
    fill_foreground(sample.image, sample.box, sample.image_label, rng);

    // Patch labels and depths from the patch-center rule used by pib.
    sample.patch_labels = Tensor({g, g});
    sample.patch_depth = Tensor({g, g});
    const double ps = static_cast<double>(cfg.patch_size);
    for (std::size_t pr = 0; pr < g; ++pr) {
      for (std::size_t pc = 0; pc < g; ++pc) {
        const double cx = (static_cast<double>(pc) + 0.5) * ps;
        const double cy = (static_cast<double>(pr) + 0.5) * ps;
        const bool fg = sample.box.contains(cx, cy);
        sample.patch_labels(pr, pc) = fg ? static_cast<double>(sample.image_label + 1) : 0.0;
        const double rel_y = cy / static_cast<double>(s);
        sample.patch_depth(pr, pc) = fg ? 2.0 + 0.5 * rel_y : 5.0 + 2.0 * rel_y;
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

GlobalBitTask make_global_bit_task(const VitModel& model,
                                   const std::vector<SyntheticSample>& dataset,
                                   std::uint64_t seed) {
  if (dataset.empty()) throw ValidationError("global bit task: empty dataset");
  Rng rng(seed);
  GlobalBitTask task;
  task.features.reserve(dataset.size());

  std::size_t max_label = 0;
  for (const SyntheticSample& s : dataset) {
    for (std::size_t i = 0; i < s.patch_labels.numel(); ++i) {
      max_label = std::max(max_label, static_cast<std::size_t>(s.patch_labels[i]));
    }
  }
  const std::size_t base_classes = max_label + 1;
  task.n_classes = 2 * base_classes;

  const std::size_t d = model.config.d_model;
  const std::size_t np = model.config.n_patches();
  task.patch_labels = Tensor({dataset.size() * np});

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int bit = static_cast<int>(rng.below(2));
    task.bits.push_back(bit);
    LayerFeatures f = forward_features(model, dataset[i].image);

    // Scale the marker to the CLS feature magnitude so a linear head can
    // separate it comfortably.
    if (bit == 1) {
      for (Tensor& tokens : f.layers) {
        double rms = 0.0;
        for (std::size_t j = 0; j < d; ++j) rms += tokens(0, j) * tokens(0, j);
        rms = std::sqrt(rms / static_cast<double>(d));
        const double kick = 4.0 * std::max(rms, 1e-3);
        for (std::size_t j = 0; j < d; ++j) tokens(0, j) += kick;
      }
    }
    task.features.push_back(std::move(f));

    for (std::size_t p = 0; p < np; ++p) {
      const double base = dataset[i].patch_labels[p];
      task.patch_labels[i * np + p] = base + static_cast<double>(bit) * base_classes;
    }
  }
  return task;
}

}  // namespace savt

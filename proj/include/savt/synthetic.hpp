#pragma once

#include <cstdint>
#include <vector>

#include "savt/analysis.hpp"
#include "savt/tensor.hpp"
#include "savt/vit.hpp"

namespace savt {

// Seeded generator for the desk-scale datasets: a textured rectangular
// foreground on a gradient background, with the box, per-patch class labels
// and per-patch depths known by construction.
struct SyntheticConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t n_images = 16;
  std::size_t n_foreground_classes = 2;
  std::uint64_t seed = 0;
};

struct SyntheticSample {
  std::string id;
  Tensor image;        // [S x S x 3] in [0, 1]
  BoxAnnotation box;
  Tensor patch_labels; // [grid x grid], 0 = background, 1.. = foreground class
  Tensor patch_depth;  // [grid x grid], strictly positive
  std::size_t image_label = 0;  // foreground class id, 0-based
};

std::vector<SyntheticSample> make_synthetic_dataset(const SyntheticConfig& cfg);

// The constructed global-bit task: per image an independent coin flip is
// written into the CLS feature of every layer (and nowhere else), and patch
// labels become label = patch_class + n_classes * bit. Patch tokens carry no
// information about the bit, so a patch-only probe is capped while a
// CLS-concatenated probe can recover it.
struct GlobalBitTask {
  std::vector<LayerFeatures> features;
  Tensor patch_labels;  // [n_images * n_patches]
  std::vector<int> bits;
  std::size_t n_classes = 0;  // label count after mixing in the bit
};

GlobalBitTask make_global_bit_task(const VitModel& model,
                                   const std::vector<SyntheticSample>& dataset,
                                   std::uint64_t seed);

}  // namespace savt

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "savt/tensor.hpp"
#include "savt/vit.hpp"

namespace savt {

// Foreground box in pixel coordinates, half-open on both axes.
struct BoxAnnotation {
  std::string image_id;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  void validate(std::size_t image_size) const;
  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct PibLayer {
  std::size_t hits = 0;
  double fraction = 0.0;
  // Per-image argmax patch coordinates (row, col).
  std::vector<std::array<std::size_t, 2>> argmax;
};

struct PibReport {
  std::size_t n_images = 0;
  std::vector<PibLayer> layers;  // index 0 = layer 1
};

// Point-in-box: per layer, the fraction of images whose patch with the
// highest cosine similarity to the CLS token has its patch center inside the
// foreground box. Argmax ties resolve to the lowest flat patch index.
PibReport pib(const std::vector<LayerFeatures>& batch, const std::vector<BoxAnnotation>& boxes);

// Cosine similarity of the CLS token to every patch token of one layer
// (1-based), reshaped to the patch grid.
Tensor cls_patch_similarity(const LayerFeatures& features, std::size_t layer);

// Projects patch features onto their top-3 principal components and renders
// them as RGB in [0, 1]. Components come from a Jacobi eigendecomposition of
// the feature covariance; feature columns are canonicalized (sorted) first so
// the output is bit-exact under feature-dimension permutations. Each
// component's sign is fixed so its largest-magnitude loading is positive, and
// channels are min-max normalized.
Tensor pca_rgb(const Tensor& patch_features, std::size_t grid_h, std::size_t grid_w);

// Top principal components of a [n x d] matrix: eigenvalues (descending) and
// column eigenvectors of the covariance. Exposed for reuse and testing.
struct PcaBasis {
  std::vector<double> eigenvalues;  // all d, descending
  Tensor components;                // [d x k], canonical column order
  std::vector<std::size_t> canonical_order;
};
PcaBasis pca_basis(const Tensor& centered, std::size_t k);

}  // namespace savt

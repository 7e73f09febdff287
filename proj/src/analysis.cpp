#include "savt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "savt/ops.hpp"

namespace savt {

void BoxAnnotation::validate(std::size_t image_size) const {
  const double s = static_cast<double>(image_size);
  if (!(x0 >= 0 && y0 >= 0 && x1 <= s && y1 <= s)) {
    throw ValidationError("box '" + image_id + "' exceeds image bounds");
  }
  if (!(x1 > x0 && y1 > y0)) {
    throw ValidationError("box '" + image_id + "' has no area");
  }
}

PibReport pib(const std::vector<LayerFeatures>& batch, const std::vector<BoxAnnotation>& boxes) {
  if (batch.empty()) throw ValidationError("pib: empty feature batch");
  if (boxes.size() != batch.size()) {
    throw ValidationError("pib: " + std::to_string(batch.size()) + " images but " +
                          std::to_string(boxes.size()) + " annotations");
  }
  const VitConfig& cfg = batch.front().config;
  const std::size_t n_layers = batch.front().layers.size();
  const TokenMap tok = batch.front().tokens;
  for (const BoxAnnotation& b : boxes) b.validate(cfg.image_size);

  PibReport report;
  report.n_images = batch.size();
  report.layers.resize(n_layers);
  const double ps = static_cast<double>(cfg.patch_size);

  for (std::size_t l = 0; l < n_layers; ++l) {
    PibLayer& layer = report.layers[l];
    layer.argmax.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Tensor& tokens = batch[i].layers[l];
      const std::size_t d = tokens.extent(1);
      const Tensor cls({std::vector<std::size_t>{1, d}},
                       std::vector<double>(tokens.data(), tokens.data() + d));
      Tensor patches({tok.n_patches(), d});
      std::copy(tokens.data() + tok.patch_offset() * d,
                tokens.data() + (tok.patch_offset() + tok.n_patches()) * d, patches.data());
      const Tensor sims = cosine_similarity(cls, patches);
      // ties -> lowest flat index
      std::size_t best = 0;
      for (std::size_t p = 1; p < tok.n_patches(); ++p) {
        if (sims[p] > sims[best]) best = p;
      }
      const std::size_t pr = best / tok.cols, pc = best % tok.cols;
      layer.argmax.push_back({pr, pc});
      const double cx = (static_cast<double>(pc) + 0.5) * ps;
      const double cy = (static_cast<double>(pr) + 0.5) * ps;
      if (boxes[i].contains(cx, cy)) ++layer.hits;
    }
    layer.fraction = static_cast<double>(layer.hits) / static_cast<double>(batch.size());
  }
  return report;
}

Tensor cls_patch_similarity(const LayerFeatures& features, std::size_t layer) {
  const Tensor& tokens = features.layer(layer);
  const TokenMap& tok = features.tokens;
  const std::size_t d = tokens.extent(1);
  const Tensor cls({std::vector<std::size_t>{1, d}},
                   std::vector<double>(tokens.data(), tokens.data() + d));
  Tensor patches({tok.n_patches(), d});
  std::copy(tokens.data() + tok.patch_offset() * d,
            tokens.data() + (tok.patch_offset() + tok.n_patches()) * d, patches.data());
  return reshape(cosine_similarity(cls, patches), {tok.rows, tok.cols});
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Deterministic:
// fixed sweep order, converges when all off-diagonal mass is gone.
void jacobi_eigen(std::vector<double>& a, std::size_t n, std::vector<double>& v) {
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    }
    if (off <= 1e-300) break;
    double diag = 0.0;
    for (std::size_t p = 0; p < n; ++p) diag += a[p * n + p] * a[p * n + p];
    if (off <= 1e-30 * std::max(diag, 1e-300)) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t r = 0; r < n; ++r) {
          const double arp = a[r * n + p], arq = a[r * n + q];
          a[r * n + p] = c * arp - s * arq;
          a[r * n + q] = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double apr = a[p * n + r], aqr = a[q * n + r];
          a[p * n + r] = c * apr - s * aqr;
          a[q * n + r] = s * apr + c * aqr;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v[r * n + p], vrq = v[r * n + q];
          v[r * n + p] = c * vrp - s * vrq;
          v[r * n + q] = s * vrp + c * vrq;
        }
      }
    }
  }
}

}  // namespace

PcaBasis pca_basis(const Tensor& centered, std::size_t k) {
  const std::size_t n = centered.extent(0), d = centered.extent(1);
  if (n < 2) throw ValidationError("pca: need at least 2 rows");

  // Canonical column order: sort feature dimensions by their full column
  // content (lexicographic, descending). All later accumulation runs in this
  // order, so the result cannot depend on the input dimension order.
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t r = 0; r < n; ++r) {
      const double va = centered(r, a), vb = centered(r, b);
      if (va != vb) return va > vb;
    }
    return false;  // identical columns: keep a stable relation
  });

  std::vector<double> cov(d * d, 0.0);
  const double denom = static_cast<double>(n - 1);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += centered(r, order[a]) * centered(r, order[b]);
      cov[a * d + b] = acc / denom;
      cov[b * d + a] = cov[a * d + b];
    }
  }

  std::vector<double> vecs;
  jacobi_eigen(cov, d, vecs);

  std::vector<std::size_t> rank_order(d);
  std::iota(rank_order.begin(), rank_order.end(), 0);
  std::sort(rank_order.begin(), rank_order.end(),
            [&](std::size_t a, std::size_t b) { return cov[a * d + a] > cov[b * d + b]; });

  PcaBasis basis;
  basis.canonical_order = order;
  basis.eigenvalues.resize(d);
  for (std::size_t i = 0; i < d; ++i) basis.eigenvalues[i] = cov[rank_order[i] * d + rank_order[i]];
  basis.components = Tensor({d, k});
  for (std::size_t c = 0; c < k && c < d; ++c) {
    const std::size_t col = rank_order[c];
    // Sign convention: the largest-magnitude loading of each component is
    // positive; magnitude ties resolve to the lowest canonical index.
    std::size_t lead = 0;
    for (std::size_t r = 1; r < d; ++r) {
      if (std::abs(vecs[r * d + col]) > std::abs(vecs[lead * d + col])) lead = r;
    }
    const double flip = vecs[lead * d + col] < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < d; ++r) basis.components(r, c) = flip * vecs[r * d + col];
  }
  return basis;
}

Tensor pca_rgb(const Tensor& patch_features, std::size_t grid_h, std::size_t grid_w) {
  if (patch_features.rank() != 2) {
    throw ShapeError("pca_rgb: expected [n_patches x d], got " +
                     shape_to_string(patch_features.shape()));
  }
  const std::size_t n = patch_features.extent(0), d = patch_features.extent(1);
  if (n != grid_h * grid_w) {
    throw ShapeError("pca_rgb: " + std::to_string(n) + " rows do not fill a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  if (d < 3) throw ValidationError("pca_rgb: need at least 3 feature dimensions");

  Tensor centered = patch_features;
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += centered(r, c);
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) centered(r, c) -= mean;
  }

  const PcaBasis basis = pca_basis(centered, 3);
  const double lead = std::max(basis.eigenvalues.front(), 0.0);
  std::size_t rank = 0;
  for (double ev : basis.eigenvalues) {
    if (ev > lead * 1e-12 && ev > 0.0) ++rank;
  }
  if (rank < 3) {
    throw NumericError("pca_rgb: centered features have rank " + std::to_string(rank) +
                       ", need at least 3");
  }

  // Project in canonical column order.
  Tensor proj({n, 3});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        acc += centered(r, basis.canonical_order[a]) * basis.components(a, c);
      }
      proj(r, c) = acc;
    }
  }

  for (std::size_t c = 0; c < 3; ++c) {
    double lo = proj(0, c), hi = proj(0, c);
    for (std::size_t r = 1; r < n; ++r) {
      lo = std::min(lo, proj(r, c));
      hi = std::max(hi, proj(r, c));
    }
    const double span = hi - lo;
    for (std::size_t r = 0; r < n; ++r) {
      proj(r, c) = span > 0.0 ? (proj(r, c) - lo) / span : 0.0;
    }
  }
  return reshape(proj, {grid_h, grid_w, 3});
}

}  // namespace savt

#include "savt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace savt {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

// Strides of a row-major layout.
std::vector<std::size_t> strides_of(const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) {
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  // b is transposed up front so each output element is a contiguous dot
  // product, still accumulated left-to-right over k.
  std::vector<double> bt(k * n);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < n; ++c) bt[c * k + r] = b(r, c);
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bcol = bt.data() + j * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * bcol[t];
      out(i, j) = acc;
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  Tensor out({a.extent(1), a.extent(0)});
  for (std::size_t i = 0; i < a.extent(0); ++i) {
    for (std::size_t j = 0; j < a.extent(1); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  if (axes.size() != a.rank()) {
    throw ShapeError("permute: axes count " + std::to_string(axes.size()) +
                     " does not match rank of " + shape_to_string(a.shape()));
  }
  std::vector<bool> seen(a.rank(), false);
  for (std::size_t ax : axes) {
    if (ax >= a.rank() || seen[ax]) throw ShapeError("permute: invalid axis list");
    seen[ax] = true;
  }
  std::vector<std::size_t> out_shape(a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) out_shape[i] = a.extent(axes[i]);
  const auto in_strides = strides_of(a.shape());
  const auto out_strides = strides_of(out_shape);
  Tensor out(out_shape);
  std::vector<std::size_t> idx(a.rank(), 0);
  for (std::size_t flat = 0; flat < out.numel(); ++flat) {
    std::size_t rem = flat, src = 0;
    for (std::size_t i = 0; i < a.rank(); ++i) {
      const std::size_t coord = rem / out_strides[i];
      rem %= out_strides[i];
      src += coord * in_strides[axes[i]];
    }
    out[flat] = a[src];
  }
  return out;
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                     shape_to_string(shape));
  }
  return Tensor(std::move(shape), a.flat());
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return out;
}

namespace {

// Shared walker for axis reductions: outer x axis x inner layout.
template <typename Init, typename Fold, typename Finish>
Tensor reduce_axis(const Tensor& a, std::size_t axis, Init init, Fold fold, Finish finish) {
  if (axis >= a.rank()) {
    throw ShapeError("reduce: axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(a.shape()));
  }
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.extent(i));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.extent(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.extent(i);
  const std::size_t n = a.extent(axis);
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double acc = init();
      for (std::size_t t = 0; t < n; ++t) {
        acc = fold(acc, a[(o * n + t) * inner + in]);
      }
      out[o * inner + in] = finish(acc, n);
    }
  }
  return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, std::size_t axis) {
  return reduce_axis(
      a, axis, [] { return 0.0; }, [](double acc, double v) { return acc + v; },
      [](double acc, std::size_t) { return acc; });
}

Tensor reduce_mean(const Tensor& a, std::size_t axis) {
  return reduce_axis(
      a, axis, [] { return 0.0; }, [](double acc, double v) { return acc + v; },
      [](double acc, std::size_t n) { return acc / static_cast<double>(n); });
}

Tensor reduce_max(const Tensor& a, std::size_t axis) {
  if (a.extent(axis) == 0) throw ShapeError("reduce_max: empty axis");
  return reduce_axis(
      a, axis, [] { return -std::numeric_limits<double>::infinity(); },
      [](double acc, double v) { return v > acc ? v : acc; },
      [](double acc, std::size_t) { return acc; });
}

std::vector<std::size_t> argmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError("argmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(a.shape()));
  }
  if (a.extent(axis) == 0) throw ShapeError("argmax: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.extent(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.extent(i);
  const std::size_t n = a.extent(axis);
  std::vector<std::size_t> out(outer * inner, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double best = a[(o * n + 0) * inner + in];
      std::size_t best_idx = 0;
      for (std::size_t t = 1; t < n; ++t) {
        const double v = a[(o * n + t) * inner + in];
        if (v > best) {
          best = v;
          best_idx = t;
        }
      }
      out[o * inner + in] = best_idx;
    }
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = parts.front().rank();
  if (axis >= rank) throw ShapeError("concat: axis out of range");
  std::vector<std::size_t> out_shape = parts.front().shape();
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != axis && p.extent(i) != parts.front().extent(i)) {
        throw ShapeError("concat: shape mismatch " + shape_to_string(p.shape()) + " vs " +
                         shape_to_string(parts.front().shape()));
      }
    }
    out_shape[axis] += p.extent(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::size_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t dst_off = 0;
    for (const Tensor& p : parts) {
      const std::size_t block = p.extent(axis) * inner;
      const double* src = p.data() + o * block;
      double* dst = out.data() + (o * out_shape[axis] + dst_off) * inner;
      std::copy(src, src + block, dst);
      dst_off += p.extent(axis);
    }
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  require_rank(a, 2, "gather_rows");
  const std::size_t d = a.extent(1);
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.extent(0)) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_to_string(a.shape()));
    }
    std::copy(a.data() + rows[i] * d, a.data() + (rows[i] + 1) * d, out.data() + i * d);
  }
  return out;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "cosine_similarity");
  require_rank(b, 2, "cosine_similarity");
  if (a.extent(1) != b.extent(1)) {
    throw ShapeError("cosine_similarity: feature dims differ " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.extent(0), n = b.extent(0), d = a.extent(1);
  std::vector<double> na(m), nb(n);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += a(i, t) * a(i, t);
    na[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += b(j, t) * b(j, t);
    nb[j] = std::sqrt(s);
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += a(i, t) * b(j, t);
      const double denom = na[i] * nb[j];
      out(i, j) = denom > 0.0 ? dot / denom : 0.0;
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  if (eps <= 0.0) throw ValidationError("layer_norm: eps must be positive");
  const std::size_t d = x.extent(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: affine params " + shape_to_string(gamma.shape()) + "/" +
                     shape_to_string(beta.shape()) + " do not match last axis of " +
                     shape_to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * d;
    double* o = out.data() + r * d;
    double mean = 0.0;
    for (std::size_t t = 0; t < d; ++t) mean += in[t];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      const double c = in[t] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t t = 0; t < d; ++t) {
      o[t] = gamma[t] * ((in[t] - mean) * inv) + beta[t];
    }
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = out[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  }
  return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out = matmul(x, w);
  if (b.empty()) return out;
  const std::size_t n = out.extent(1);
  if (b.numel() != n) {
    throw ShapeError("affine: bias " + shape_to_string(b.shape()) + " does not match output " +
                     shape_to_string(out.shape()));
  }
  for (std::size_t i = 0; i < out.extent(0); ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) += b[j];
  }
  return out;
}

bool all_finite(const Tensor& a) {
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!std::isfinite(a[i])) return false;
  }
  return true;
}

}  // namespace savt

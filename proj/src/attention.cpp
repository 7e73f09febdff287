#include "savt/attention.hpp"

#include <cmath>

#include "savt/ops.hpp"

namespace savt {

void AttentionConfig::validate() const {
  if (d_model == 0 || n_heads == 0) {
    throw ValidationError("attention: d_model and n_heads must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ValidationError("attention: n_heads " + std::to_string(n_heads) +
                          " does not divide d_model " + std::to_string(d_model));
  }
}

AttendResult attend(const AttentionConfig& cfg, const Tensor& q, const Tensor& k,
                    const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("attend: q, k, v must be [T x d_head]");
  }
  const std::size_t t = q.extent(0), d = q.extent(1);
  if (d == 0) throw ShapeError("attend: d_head must be >= 1");
  if (k.extent(0) != t || v.extent(0) != t || k.extent(1) != d || v.extent(1) != d) {
    throw ShapeError("attend: mismatched shapes q" + shape_to_string(q.shape()) + " k" +
                     shape_to_string(k.shape()) + " v" + shape_to_string(v.shape()));
  }
  // Scaling uses 1/sqrt(d_head), the per-head reading of 1/sqrt(d).
  Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor attn = normalize_rows(logits, cfg.normalizer, cfg.solver);
  AttendResult out;
  out.y = matmul(attn, v);
  out.attn = std::move(attn);
  return out;
}

namespace {

Tensor head_slice(const Tensor& x, std::size_t head, std::size_t d_head) {
  const std::size_t t = x.extent(0);
  Tensor out({t, d_head});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d_head; ++j) out(i, j) = x(i, head * d_head + j);
  }
  return out;
}

}  // namespace

MultiHeadResult multi_head_attend(const AttentionConfig& cfg, const AttentionWeights& w,
                                  const Tensor& x) {
  cfg.validate();
  if (x.rank() != 2 || x.extent(1) != cfg.d_model) {
    throw ShapeError("multi_head_attend: input " + shape_to_string(x.shape()) +
                     " does not match d_model " + std::to_string(cfg.d_model));
  }
  const std::size_t t = x.extent(0), h = cfg.n_heads, dh = cfg.d_head();
  const Tensor q = affine(x, w.w_q, w.b_q);
  const Tensor k = affine(x, w.w_k, w.b_k);
  const Tensor v = affine(x, w.w_v, w.b_v);

  Tensor merged({t, cfg.d_model});
  Tensor attn({h, t, t});
  for (std::size_t head = 0; head < h; ++head) {
    const AttendResult r =
        attend(cfg, head_slice(q, head, dh), head_slice(k, head, dh), head_slice(v, head, dh));
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < dh; ++j) merged(i, head * dh + j) = r.y(i, j);
      for (std::size_t j = 0; j < t; ++j) attn(head, i, j) = r.attn(i, j);
    }
  }
  MultiHeadResult out;
  out.y = affine(merged, w.w_o, w.b_o);
  out.attn = std::move(attn);
  return out;
}

Tensor attend_grad_logits(const AttentionConfig& cfg, const Tensor& logits, const Tensor& v,
                          const Tensor& upstream_y) {
  if (logits.rank() != 2 || logits.extent(0) != logits.extent(1)) {
    throw ShapeError("attend_grad_logits: logits must be [T x T], got " +
                     shape_to_string(logits.shape()));
  }
  const std::size_t t = logits.extent(0);
  if (v.rank() != 2 || v.extent(0) != t || !same_shape(v, upstream_y)) {
    throw ShapeError("attend_grad_logits: v " + shape_to_string(v.shape()) + " / upstream " +
                     shape_to_string(upstream_y.shape()) + " inconsistent with T " +
                     std::to_string(t));
  }
  const std::size_t d = v.extent(1);
  Tensor grad({t, t});
  Tensor row({t});
  Tensor upstream_attn({t});
  for (std::size_t i = 0; i < t; ++i) {
    std::copy(logits.data() + i * t, logits.data() + (i + 1) * t, row.data());
    const NormalizerResult res = normalize(row, cfg.normalizer, cfg.solver);
    // d y_i / d attn_ij = v_j, so the upstream on the attention row is V g.
    for (std::size_t j = 0; j < t; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += upstream_y(i, c) * v(j, c);
      upstream_attn[j] = acc;
    }
    const Tensor g = cfg.normalizer == NormalizerKind::kSoftmax
                         ? softmax_vjp(res, upstream_attn)
                         : entmax15_vjp(res, upstream_attn);
    std::copy(g.data(), g.data() + t, grad.data() + i * t);
  }
  return grad;
}

}  // namespace savt

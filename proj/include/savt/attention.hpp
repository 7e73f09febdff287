#pragma once

#include <cstddef>

#include "savt/normalizers.hpp"
#include "savt/tensor.hpp"

namespace savt {

struct AttentionConfig {
  std::size_t d_model = 0;
  std::size_t n_heads = 1;
  NormalizerKind normalizer = NormalizerKind::kSoftmax;
  EntmaxSolver solver = EntmaxSolver::kSort;

  std::size_t d_head() const { return d_model / n_heads; }
  void validate() const;
};

// Projection weights for one multi-head attention block. Biases may be empty.
struct AttentionWeights {
  Tensor w_q, w_k, w_v, w_o;
  Tensor b_q, b_k, b_v, b_o;
};

struct AttendResult {
  Tensor y;     // [T x d_head]
  Tensor attn;  // [T x T], rows on the simplex
};

// Single-head scaled dot-product attention: rows of attn are the configured
// normalizer applied to Q K^T / sqrt(d_head), y = attn V.
AttendResult attend(const AttentionConfig& cfg, const Tensor& q, const Tensor& k, const Tensor& v);

struct MultiHeadResult {
  Tensor y;     // [T x d_model]
  Tensor attn;  // [heads x T x T]
};

MultiHeadResult multi_head_attend(const AttentionConfig& cfg, const AttentionWeights& w,
                                  const Tensor& x);

// Gradient of sum(upstream_y (.) normalize_rows(logits) V) with respect to the
// logits, composed row-wise from the normalizer VJPs.
Tensor attend_grad_logits(const AttentionConfig& cfg, const Tensor& logits, const Tensor& v,
                          const Tensor& upstream_y);

}  // namespace savt

#pragma once

#include <cstddef>
#include <vector>

#include "savt/tensor.hpp"

namespace savt {

// 2-D matrix product with a fixed left-to-right summation order over the
// inner extent, for run-to-run and cross-platform reproducibility.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor reduce_sum(const Tensor& a, std::size_t axis);
Tensor reduce_mean(const Tensor& a, std::size_t axis);
Tensor reduce_max(const Tensor& a, std::size_t axis);

// Index of the largest element along the axis; ties resolve to the lowest index.
std::vector<std::size_t> argmax(const Tensor& a, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows);

// Pairwise cosine similarity between rows of a [m x d] and b [n x d].
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// Normalizes the last axis to mean 0 / population variance 1, then applies
// the affine parameters.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// Exact-erf GELU, elementwise.
Tensor gelu(const Tensor& x);

// x [n x d_in] * w [d_in x d_out] + b [d_out] broadcast per row. b may be empty.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

bool all_finite(const Tensor& a);

}  // namespace savt

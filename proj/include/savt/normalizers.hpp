#pragma once

#include <cstdint>
#include <vector>

#include "savt/tensor.hpp"

namespace savt {

enum class NormalizerKind { kSoftmax, kEntmax15 };
enum class EntmaxSolver { kBisect, kSort };

// Probability vector on the simplex plus its support mask. tau is defined for
// entmax results only; reading it from a softmax result throws.
class NormalizerResult {
 public:
  Tensor p;
  std::vector<std::uint8_t> support;  // support[i] == 1  <=>  p[i] > 0

  static NormalizerResult with_tau(Tensor p, std::vector<std::uint8_t> support, double tau);
  static NormalizerResult without_tau(Tensor p, std::vector<std::uint8_t> support);

  bool has_tau() const { return has_tau_; }
  double tau() const;

  std::size_t support_size() const;

 private:
  double tau_ = 0.0;
  bool has_tau_ = false;
};

// Numerically stable max-subtracted softmax; support is every index.
NormalizerResult softmax(const Tensor& z);

// Reference entmax-1.5 solver. Bisects the threshold of
//   p_i = max((z_i - tau) / 2, 0)^2,  sum_i p_i = 1
// on [max(z) - 2, max(z)] to tau_tol, clips exact zeros, and spreads the
// residual normalization error over the support proportionally to sqrt(p).
NormalizerResult entmax15_bisect(const Tensor& z, double tau_tol = 1e-12);

// Exact top-k threshold search over the sorted halved scores. Agrees with
// entmax15_bisect to 1e-9 elementwise.
NormalizerResult entmax15_sort(const Tensor& z);

// Backward of entmax-1.5 through a forward result:
//   vjp = s (.) g - <g, s> / |s|_1 * s   with s_i = sqrt(p_i) on the support.
Tensor entmax15_vjp(const NormalizerResult& result, const Tensor& upstream);

// Standard softmax backward p (.) (g - <g, p>).
Tensor softmax_vjp(const NormalizerResult& result, const Tensor& upstream);

struct SupportStats {
  double mean_fraction = 0.0;
  double min_fraction = 0.0;
  double max_fraction = 0.0;
  std::size_t rows = 0;
};

// Fraction of strictly positive entries per row of a [rows x n] probability
// batch. Rows must lie on the simplex within 1e-6.
SupportStats support_stats(const Tensor& p_batch);

// Applies the configured normalizer to every row of a [rows x n] logit matrix.
Tensor normalize_rows(const Tensor& logits, NormalizerKind kind,
                      EntmaxSolver solver = EntmaxSolver::kSort);

NormalizerResult normalize(const Tensor& z, NormalizerKind kind,
                           EntmaxSolver solver = EntmaxSolver::kSort);

// Test hook for the acceptance suite's negative control: shifts the entmax
// threshold by a constant before probabilities are formed. Keep at 0.
void set_entmax_tau_perturbation(double delta);
double entmax_tau_perturbation();

}  // namespace savt

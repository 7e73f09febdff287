#include "savt/normalizers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "savt/ops.hpp"

namespace savt {

namespace {

double g_tau_perturbation = 0.0;

void require_logit_vector(const Tensor& z, const char* op) {
  if (z.rank() != 1 || z.numel() == 0) {
    throw ShapeError(std::string(op) + ": expected a nonempty vector, got " +
                     shape_to_string(z.shape()));
  }
  if (!all_finite(z)) throw ValidationError(std::string(op) + ": logits must be finite");
}

// Exact uniform output for constant input. Both entmax solvers take this
// path so that a constant row matches softmax bitwise.
NormalizerResult uniform_result(std::size_t n, double c) {
  const double nn = static_cast<double>(n);
  Tensor p = Tensor::full({n}, 1.0 / nn);
  std::vector<std::uint8_t> support(n, 1);
  // tau from ((c - tau)/2)^2 = 1/n.
  return NormalizerResult::with_tau(std::move(p), std::move(support), c - 2.0 / std::sqrt(nn));
}

// Builds probabilities from a threshold: clips exact zeros, then spreads the
// residual normalization error over the support proportionally to sqrt(p).
// The correction scalars are accumulated over sorted support values so the
// output does not depend on the input order.
NormalizerResult finalize_entmax(const Tensor& z, double tau) {
  const std::size_t n = z.numel();
  Tensor p({n});
  std::vector<std::uint8_t> support(n, 0);
  std::vector<double> roots;
  roots.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (z[i] > tau) {
      const double s = (z[i] - tau) * 0.5;
      p[i] = s * s;
      support[i] = 1;
      roots.push_back(s);
    }
  }
  std::sort(roots.begin(), roots.end(), std::greater<double>());
  double total = 0.0, sqrt_total = 0.0;
  for (double s : roots) {
    total += s * s;
    sqrt_total += s;
  }
  const double residual = 1.0 - total;
  if (sqrt_total > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      if (support[i]) p[i] += residual * ((z[i] - tau) * 0.5) / sqrt_total;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (support[i] && p[i] < 0.0) p[i] = 0.0;
  }
  return NormalizerResult::with_tau(std::move(p), std::move(support), tau);
}

}  // namespace

NormalizerResult NormalizerResult::with_tau(Tensor p, std::vector<std::uint8_t> support,
                                            double tau) {
  NormalizerResult r;
  r.p = std::move(p);
  r.support = std::move(support);
  r.tau_ = tau;
  r.has_tau_ = true;
  return r;
}

NormalizerResult NormalizerResult::without_tau(Tensor p, std::vector<std::uint8_t> support) {
  NormalizerResult r;
  r.p = std::move(p);
  r.support = std::move(support);
  return r;
}

double NormalizerResult::tau() const {
  if (!has_tau_) {
    throw std::logic_error("NormalizerResult: tau is undefined for this normalizer");
  }
  return tau_;
}

std::size_t NormalizerResult::support_size() const {
  std::size_t k = 0;
  for (std::uint8_t s : support) k += s;
  return k;
}

NormalizerResult softmax(const Tensor& z) {
  require_logit_vector(z, "softmax");
  const std::size_t n = z.numel();
  double zmax = z[0];
  for (std::size_t i = 1; i < n; ++i) zmax = std::max(zmax, z[i]);
  Tensor p({n});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(z[i] - zmax);
    total += p[i];
  }
  for (std::size_t i = 0; i < n; ++i) p[i] /= total;
  return NormalizerResult::without_tau(std::move(p), std::vector<std::uint8_t>(n, 1));
}

NormalizerResult entmax15_bisect(const Tensor& z, double tau_tol) {
  require_logit_vector(z, "entmax15_bisect");
  if (tau_tol <= 0.0) throw ValidationError("entmax15_bisect: tau_tol must be positive");
  const std::size_t n = z.numel();

  // Accumulate over a descending copy so the result does not depend on the
  // input order (exact permutation equivariance).
  std::vector<double> sorted(z.data(), z.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  const double zmax = sorted.front();
  if (sorted.back() == zmax) return uniform_result(n, zmax);

  // S(tau) = sum_i max((z_i - tau)/2, 0)^2 is strictly decreasing on
  // [zmax - 2, zmax] with S(zmax - 2) >= 1 and S(zmax) = 0.
  const auto mass = [&sorted](double tau) {
    double acc = 0.0;
    for (double v : sorted) {
      if (v <= tau) break;
      const double s = (v - tau) * 0.5;
      acc += s * s;
    }
    return acc;
  };

  double lo = zmax - 2.0, hi = zmax;
  while (hi - lo > tau_tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // interval at floating-point resolution
    if (mass(mid) < 1.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  const double tau = 0.5 * (lo + hi) + g_tau_perturbation;
  return finalize_entmax(z, tau);
}

NormalizerResult entmax15_sort(const Tensor& z) {
  require_logit_vector(z, "entmax15_sort");
  const std::size_t n = z.numel();

  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = z[i] * 0.5;
  std::sort(u.begin(), u.end(), std::greater<double>());
  if (u.back() == u.front()) return uniform_result(n, z[0]);

  // For support size k the threshold half t solves
  //   sum_{i<=k} (u_i - t)^2 = 1  =>  t = mean_k - sqrt((1 - ss_k) / k)
  // where ss_k is the sum of squared deviations of the top k entries. The
  // valid k is the one bracketed by u_k > t >= u_{k+1}.
  double prefix = 0.0, prefix_sq = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    prefix += u[k - 1];
    prefix_sq += u[k - 1] * u[k - 1];
    const double kk = static_cast<double>(k);
    const double mean = prefix / kk;
    const double ss = prefix_sq - prefix * mean;
    const double disc = (1.0 - ss) / kk;
    if (disc < 0.0) continue;
    const double t = mean - std::sqrt(disc);
    const bool upper_ok = u[k - 1] > t;
    const bool lower_ok = (k == n) || (t >= u[k]);
    if (upper_ok && lower_ok) {
      return finalize_entmax(z, 2.0 * t + g_tau_perturbation);
    }
  }
  throw NumericError("entmax15_sort: no support size satisfied the bracketing condition");
}

Tensor entmax15_vjp(const NormalizerResult& result, const Tensor& upstream) {
  const std::size_t n = result.p.numel();
  if (upstream.numel() != n || upstream.rank() != 1) {
    throw ShapeError("entmax15_vjp: upstream " + shape_to_string(upstream.shape()) +
                     " does not match result size " + std::to_string(n));
  }
  Tensor out({n});
  std::vector<double> s(n, 0.0);
  double s_sum = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (result.support[i]) {
      s[i] = std::sqrt(result.p[i]);
      s_sum += s[i];
      weighted += upstream[i] * s[i];
    }
  }
  if (s_sum == 0.0) return out;
  const double mean = weighted / s_sum;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = s[i] * (upstream[i] - mean);
  }
  return out;
}

Tensor softmax_vjp(const NormalizerResult& result, const Tensor& upstream) {
  const std::size_t n = result.p.numel();
  if (upstream.numel() != n || upstream.rank() != 1) {
    throw ShapeError("softmax_vjp: upstream " + shape_to_string(upstream.shape()) +
                     " does not match result size " + std::to_string(n));
  }
  double inner = 0.0;
  for (std::size_t i = 0; i < n; ++i) inner += upstream[i] * result.p[i];
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = result.p[i] * (upstream[i] - inner);
  return out;
}

SupportStats support_stats(const Tensor& p_batch) {
  if (p_batch.rank() != 2 || p_batch.extent(0) == 0 || p_batch.extent(1) == 0) {
    throw ShapeError("support_stats: expected a nonempty [rows x n] batch, got " +
                     shape_to_string(p_batch.shape()));
  }
  const std::size_t rows = p_batch.extent(0), n = p_batch.extent(1);
  SupportStats stats;
  stats.rows = rows;
  stats.min_fraction = 1.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    std::size_t positive = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = p_batch(r, j);
      if (v < 0.0) {
        throw ValidationError("support_stats: row " + std::to_string(r) +
                              " has a negative entry");
      }
      total += v;
      if (v > 0.0) ++positive;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ValidationError("support_stats: row " + std::to_string(r) +
                            " is off the simplex (sum " + std::to_string(total) + ")");
    }
    const double frac = static_cast<double>(positive) / static_cast<double>(n);
    stats.mean_fraction += frac;
    stats.min_fraction = std::min(stats.min_fraction, frac);
    stats.max_fraction = std::max(stats.max_fraction, frac);
  }
  stats.mean_fraction /= static_cast<double>(rows);
  return stats;
}

NormalizerResult normalize(const Tensor& z, NormalizerKind kind, EntmaxSolver solver) {
  if (kind == NormalizerKind::kSoftmax) return softmax(z);
  return solver == EntmaxSolver::kBisect ? entmax15_bisect(z) : entmax15_sort(z);
}

Tensor normalize_rows(const Tensor& logits, NormalizerKind kind, EntmaxSolver solver) {
  if (logits.rank() != 2) {
    throw ShapeError("normalize_rows: expected [rows x n], got " +
                     shape_to_string(logits.shape()));
  }
  const std::size_t rows = logits.extent(0), n = logits.extent(1);
  Tensor out({rows, n});
  Tensor row({n});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(logits.data() + r * n, logits.data() + (r + 1) * n, row.data());
    const NormalizerResult res = normalize(row, kind, solver);
    std::copy(res.p.data(), res.p.data() + n, out.data() + r * n);
  }
  return out;
}

void set_entmax_tau_perturbation(double delta) { g_tau_perturbation = delta; }
double entmax_tau_perturbation() { return g_tau_perturbation; }

}  // namespace savt

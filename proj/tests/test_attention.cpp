#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "savt/attention.hpp"
#include "savt/ops.hpp"
#include "savt/rng.hpp"

using namespace savt;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

AttentionConfig entmax_cfg(std::size_t d_model, std::size_t heads = 1) {
  return AttentionConfig{d_model, heads, NormalizerKind::kEntmax15, EntmaxSolver::kSort};
}

AttentionConfig softmax_cfg(std::size_t d_model, std::size_t heads = 1) {
  return AttentionConfig{d_model, heads, NormalizerKind::kSoftmax, EntmaxSolver::kSort};
}

}  // namespace

TEST_CASE("attend with a single token") {
  Rng rng(1);
  const Tensor q = random_tensor(rng, {1, 4});
  const Tensor k = random_tensor(rng, {1, 4});
  const Tensor v = random_tensor(rng, {1, 4});
  for (const auto& cfg : {softmax_cfg(4), entmax_cfg(4)}) {
    const AttendResult r = attend(cfg, q, k, v);
    CHECK(r.attn(0, 0) == 1.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(r.y(0, j) == v(0, j));
  }
}

TEST_CASE("zero logits give uniform attention for both normalizers, bitwise") {
  Rng rng(2);
  const std::size_t t = 5, d = 4;
  const Tensor q({t, d});  // zeros -> zero logits
  const Tensor k = random_tensor(rng, {t, d});
  const Tensor v = random_tensor(rng, {t, d});
  const AttendResult soft = attend(softmax_cfg(d), q, k, v);
  const AttendResult ent = attend(entmax_cfg(d), q, k, v);
  for (std::size_t i = 0; i < t * t; ++i) {
    CHECK(soft.attn[i] == 1.0 / static_cast<double>(t));
    CHECK(ent.attn[i] == soft.attn[i]);
  }
  // y is the column mean of v
  const Tensor mean = reduce_mean(v, 0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) CHECK(soft.y(i, j) == doctest::Approx(mean[j]));
  }
  for (std::size_t i = 0; i < soft.y.numel(); ++i) CHECK(soft.y[i] == ent.y[i]);
}

TEST_CASE("entmax saturation picks out one value row exactly") {
  // logit gap > 2 after 1/sqrt(d) scaling forces a one-hot attention row
  const std::size_t d = 4;
  Tensor q({3, d}), k({3, d});
  const double c = 3.0 * std::sqrt(static_cast<double>(d));  // logit c / sqrt(d) = 3
  q(0, 0) = c;
  k(0, 0) = 1.0;
  k(1, 1) = 1.0;
  k(2, 2) = 1.0;
  Rng rng(3);
  const Tensor v = random_tensor(rng, {3, d});
  const AttendResult r = attend(entmax_cfg(d), q, k, v);
  CHECK(r.attn(0, 0) == 1.0);
  CHECK(r.attn(0, 1) == 0.0);
  CHECK(r.attn(0, 2) == 0.0);
  for (std::size_t j = 0; j < d; ++j) CHECK(r.y(0, j) == v(0, j));
}

TEST_CASE("attention rows live on the simplex") {
  Rng rng(4);
  for (const bool entmax : {true, false}) {
    const AttentionConfig cfg = entmax ? entmax_cfg(8) : softmax_cfg(8);
    const Tensor q = random_tensor(rng, {6, 8}, 2.0);
    const Tensor k = random_tensor(rng, {6, 8}, 2.0);
    const Tensor v = random_tensor(rng, {6, 8});
    const AttendResult r = attend(cfg, q, k, v);
    for (std::size_t i = 0; i < 6; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        CHECK(r.attn(i, j) >= 0.0);
        total += r.attn(i, j);
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("sharpened logits: entmax attention is sparse, softmax is dense") {
  Rng rng(5);
  double entmax_support = 0.0, softmax_support = 0.0;
  std::size_t rows = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t t = 8, d = 8;
    const Tensor q = random_tensor(rng, {t, d}, 8.0);  // sharpening scale 8
    const Tensor k = random_tensor(rng, {t, d});
    const Tensor v = random_tensor(rng, {t, d});
    const AttendResult ent = attend(entmax_cfg(d), q, k, v);
    const AttendResult soft = attend(softmax_cfg(d), q, k, v);
    for (std::size_t i = 0; i < t; ++i) {
      std::size_t se = 0, ss = 0;
      for (std::size_t j = 0; j < t; ++j) {
        se += ent.attn(i, j) > 0.0;
        ss += soft.attn(i, j) > 0.0;
      }
      entmax_support += static_cast<double>(se) / t;
      softmax_support += static_cast<double>(ss) / t;
      ++rows;
    }
  }
  CHECK(entmax_support / rows < 1.0);
  CHECK(softmax_support / rows == 1.0);
}

TEST_CASE("multi_head_attend with identity-like weights averages tokens") {
  const std::size_t t = 4, d = 6;
  Rng rng(6);
  const Tensor x = random_tensor(rng, {t, d});
  AttentionWeights w;
  w.w_q = Tensor({d, d});
  w.w_k = Tensor({d, d});
  w.w_v = Tensor::identity(d);
  w.w_o = Tensor::identity(d);
  const MultiHeadResult r = multi_head_attend(softmax_cfg(d, 2), w, x);
  const Tensor mean = reduce_mean(x, 0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) CHECK(r.y(i, j) == doctest::Approx(mean[j]));
  }
  CHECK(r.attn.shape() == std::vector<std::size_t>{2, t, t});
}

TEST_CASE("multi_head_attend matches a loop-assembled single-head oracle") {
  const std::size_t t = 4, d = 8, heads = 2, dh = d / heads;
  Rng rng(7);
  const Tensor x = random_tensor(rng, {t, d});
  AttentionWeights w;
  w.w_q = random_tensor(rng, {d, d});
  w.w_k = random_tensor(rng, {d, d});
  w.w_v = random_tensor(rng, {d, d});
  w.w_o = random_tensor(rng, {d, d});
  w.b_q = random_tensor(rng, {d});
  w.b_k = random_tensor(rng, {d});
  w.b_v = random_tensor(rng, {d});
  w.b_o = random_tensor(rng, {d});

  const AttentionConfig cfg = softmax_cfg(d, heads);
  const MultiHeadResult got = multi_head_attend(cfg, w, x);

  // oracle: explicit loops over heads and tokens
  Tensor q({t, d}), k({t, d}), v({t, d});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double aq = w.b_q[j], ak = w.b_k[j], av = w.b_v[j];
      for (std::size_t m = 0; m < d; ++m) {
        aq += x(i, m) * w.w_q(m, j);
        ak += x(i, m) * w.w_k(m, j);
        av += x(i, m) * w.w_v(m, j);
      }
      q(i, j) = aq;
      k(i, j) = ak;
      v(i, j) = av;
    }
  }
  Tensor merged({t, d});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      Tensor logits({t});
      for (std::size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (std::size_t m = 0; m < dh; ++m) acc += q(i, h * dh + m) * k(j, h * dh + m);
        logits[j] = acc / std::sqrt(static_cast<double>(dh));
      }
      const NormalizerResult row = softmax(logits);
      for (std::size_t m = 0; m < dh; ++m) {
        double acc = 0.0;
        for (std::size_t j = 0; j < t; ++j) acc += row.p[j] * v(j, h * dh + m);
        merged(i, h * dh + m) = acc;
      }
    }
  }
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = w.b_o[j];
      for (std::size_t m = 0; m < d; ++m) acc += merged(i, m) * w.w_o(m, j);
      CHECK(std::abs(got.y(i, j) - acc) < 1e-12);
    }
  }
}

TEST_CASE("multi_head_attend is permutation-equivariant over tokens") {
  const std::size_t t = 5, d = 8;
  Rng rng(8);
  const Tensor x = random_tensor(rng, {t, d});
  AttentionWeights w;
  w.w_q = random_tensor(rng, {d, d});
  w.w_k = random_tensor(rng, {d, d});
  w.w_v = random_tensor(rng, {d, d});
  w.w_o = random_tensor(rng, {d, d});
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor px({t, d});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < d; ++j) px(i, j) = x(perm[i], j);
  }
  for (const auto& cfg : {softmax_cfg(d, 2), entmax_cfg(d, 2)}) {
    const MultiHeadResult base = multi_head_attend(cfg, w, x);
    const MultiHeadResult permuted = multi_head_attend(cfg, w, px);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        CHECK(std::abs(permuted.y(i, j) - base.y(perm[i], j)) < 1e-9);
      }
    }
  }
}

TEST_CASE("attend_grad_logits trivial cases") {
  const AttentionConfig cfg = entmax_cfg(4);
  Rng rng(9);
  const Tensor logits = random_tensor(rng, {3, 3});
  const Tensor v = random_tensor(rng, {3, 4});
  const Tensor zero_upstream({3, 4});
  const Tensor g = attend_grad_logits(cfg, logits, v, zero_upstream);
  for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);

  // T = 1: the attention row is constantly 1
  const Tensor one_logit({1, 1});
  const Tensor g1 = attend_grad_logits(cfg, one_logit, random_tensor(rng, {1, 4}),
                                       random_tensor(rng, {1, 4}));
  CHECK(g1[0] == 0.0);
}

TEST_CASE("attend_grad_logits matches finite differences") {
  Rng rng(10);
  const double step = 1e-6;
  for (const bool use_entmax : {true, false}) {
    const AttentionConfig cfg = use_entmax ? entmax_cfg(4) : softmax_cfg(4);
    int checked = 0;
    while (checked < 10) {
      const std::size_t t = 3, d = 4;
      const Tensor logits = random_tensor(rng, {t, t});
      const Tensor v = random_tensor(rng, {t, d});
      const Tensor upstream = random_tensor(rng, {t, d});

      const auto objective = [&](const Tensor& lg) {
        const Tensor attn = normalize_rows(lg, cfg.normalizer, cfg.solver);
        const Tensor y = matmul(attn, v);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) acc += upstream[i] * y[i];
        return acc;
      };
      const auto supports = [&](const Tensor& lg) {
        std::vector<std::vector<std::uint8_t>> s;
        Tensor row({t});
        for (std::size_t i = 0; i < t; ++i) {
          std::copy(lg.data() + i * t, lg.data() + (i + 1) * t, row.data());
          s.push_back(normalize(row, cfg.normalizer, cfg.solver).support);
        }
        return s;
      };

      const auto base = supports(logits);
      bool stable = true;
      Tensor fd({t, t});
      for (std::size_t i = 0; i < t * t && stable; ++i) {
        Tensor lp = logits, lm = logits;
        lp[i] += step;
        lm[i] -= step;
        stable = supports(lp) == base && supports(lm) == base;
        fd[i] = (objective(lp) - objective(lm)) / (2.0 * step);
      }
      if (!stable) continue;
      ++checked;
      const Tensor analytic = attend_grad_logits(cfg, logits, v, upstream);
      for (std::size_t i = 0; i < t * t; ++i) CHECK(std::abs(analytic[i] - fd[i]) < 1e-5);
    }
  }
}

TEST_CASE("attention config validation and shape errors") {
  AttentionConfig bad{10, 3, NormalizerKind::kSoftmax, EntmaxSolver::kSort};
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  const AttentionConfig cfg = softmax_cfg(4);
  CHECK_THROWS_AS(attend(cfg, Tensor({2, 4}), Tensor({3, 4}), Tensor({2, 4})), ShapeError);
  AttentionWeights w;
  w.w_q = Tensor({4, 4});
  w.w_k = Tensor({4, 4});
  w.w_v = Tensor({4, 4});
  w.w_o = Tensor({4, 4});
  CHECK_THROWS_AS(multi_head_attend(cfg, w, Tensor({2, 5})), ShapeError);
}

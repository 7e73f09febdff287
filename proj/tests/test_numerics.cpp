#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "savt/ops.hpp"
#include "savt/rng.hpp"

using namespace savt;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

// independent triple-loop product
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a(i, t) * b(t, j);
      out(i, j) = acc;
    }
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(same_shape(a, b));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

template <typename Fn>
std::string error_message(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

// composite Simpson quadrature of the standard normal pdf on [0, x]
double normal_cdf_quadrature(double x) {
  const int n = 2000;
  const double h = x / n;
  const auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double acc = pdf(0.0) + pdf(x);
  for (int i = 1; i < n; ++i) acc += pdf(i * h) * (i % 2 == 0 ? 2.0 : 4.0);
  return 0.5 + acc * h / 3.0;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed cases") {
  const Tensor i2 = Tensor::identity(2);
  CHECK(max_abs_diff(matmul(i2, i2), i2) == 0.0);

  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 1, {0, 1});
  const Tensor c = matmul(a, b);
  CHECK(c(0, 0) == 2.0);
  CHECK(c(1, 0) == 4.0);
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
  Rng rng(11);
  const Tensor a = random_tensor(rng, {7, 5});
  const Tensor b = random_tensor(rng, {5, 3});
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);

  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t m = 1 + rng.below(16), k = 1 + rng.below(16), n = 1 + rng.below(16);
    const Tensor x = random_tensor(rng, {m, k});
    const Tensor y = random_tensor(rng, {k, n});
    CHECK(max_abs_diff(matmul(x, y), naive_matmul(x, y)) < 1e-12);
  }
}

TEST_CASE("matmul associativity within relative tolerance") {
  Rng rng(12);
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor a = random_tensor(rng, {4, 6});
    const Tensor b = random_tensor(rng, {6, 5});
    const Tensor c = random_tensor(rng, {5, 3});
    const Tensor left = matmul(matmul(a, b), c);
    const Tensor right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.numel(); ++i) {
      CHECK(std::abs(left[i] - right[i]) <= 1e-9 * std::max(1.0, std::abs(left[i])));
    }
  }
}

TEST_CASE("matmul shape errors name both shapes") {
  const Tensor a({7, 5});
  const Tensor b({4, 3});
  const std::string msg = error_message([&] { matmul(a, b); });
  CHECK(msg.find("[7x5]") != std::string::npos);
  CHECK(msg.find("[4x3]") != std::string::npos);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul is pure: reruns are bitwise identical") {
  Rng rng(13);
  const Tensor a = random_tensor(rng, {9, 9});
  const Tensor b = random_tensor(rng, {9, 9});
  const Tensor c1 = matmul(a, b);
  const Tensor c2 = matmul(a, b);
  for (std::size_t i = 0; i < c1.numel(); ++i) CHECK(c1[i] == c2[i]);
}

TEST_CASE("layer_norm trivial cases") {
  const Tensor gamma = Tensor::full({4}, 1.0);
  const Tensor beta({4});
  const Tensor constant = Tensor::full({4}, 3.25);
  const Tensor zeroed = layer_norm(constant, gamma, beta, 1e-6);
  for (std::size_t i = 0; i < 4; ++i) CHECK(zeroed[i] == 0.0);

  const Tensor pm = Tensor::row({1.0, -1.0});
  const Tensor out = layer_norm(pm, Tensor::full({2}, 1.0), Tensor({2}), 1e-12);
  CHECK(std::abs(out[0] - 1.0) < 1e-9);
  CHECK(std::abs(out[1] + 1.0) < 1e-9);
}

TEST_CASE("layer_norm matches a two-pass oracle") {
  Rng rng(14);
  const Tensor x = random_tensor(rng, {4, 8});
  Tensor gamma({8}), beta({8});
  for (std::size_t i = 0; i < 8; ++i) {
    gamma[i] = 0.5 + rng.uniform();
    beta[i] = rng.normal();
  }
  const double eps = 1e-6;
  const Tensor got = layer_norm(x, gamma, beta, eps);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 8; ++j) mean += x(r, j);
    mean /= 8.0;
    double var = 0.0;
    for (std::size_t j = 0; j < 8; ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
    var /= 8.0;
    for (std::size_t j = 0; j < 8; ++j) {
      const double expected = gamma[j] * (x(r, j) - mean) / std::sqrt(var + eps) + beta[j];
      CHECK(std::abs(got(r, j) - expected) < 1e-12);
    }
  }
}

TEST_CASE("layer_norm dimension and eps errors") {
  CHECK_THROWS_AS(layer_norm(Tensor({2, 4}), Tensor({3}), Tensor({4}), 1e-6), ShapeError);
  CHECK_THROWS_AS(layer_norm(Tensor({4}), Tensor({4}), Tensor({4}), 0.0), ValidationError);
}

TEST_CASE("gelu fixed points and asymptote") {
  const Tensor zero = gelu(Tensor::row({0.0}));
  CHECK(zero[0] == 0.0);
  const Tensor large = gelu(Tensor::row({25.0}));
  CHECK(std::abs(large[0] - 25.0) < 1e-9);
}

TEST_CASE("gelu(1) matches the quadrature oracle") {
  const double phi1 = normal_cdf_quadrature(1.0);
  const Tensor out = gelu(Tensor::row({1.0}));
  CHECK(std::abs(out[0] - 1.0 * phi1) < 1e-9);
}

TEST_CASE("transpose, permute, reshape") {
  Rng rng(15);
  const Tensor a = random_tensor(rng, {3, 5});
  const Tensor at = transpose(a);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(at(j, i) == a(i, j));
  }
  const Tensor b = random_tensor(rng, {2, 3, 4});
  const Tensor p = permute(b, {2, 0, 1});
  CHECK(p.shape() == std::vector<std::size_t>{4, 2, 3});
  CHECK(p(3, 1, 2) == b(1, 2, 3));
  const Tensor r = reshape(a, {5, 3});
  CHECK(r.flat() == a.flat());
  CHECK_THROWS_AS(reshape(a, {4, 4}), ShapeError);
}

TEST_CASE("elementwise ops and reductions") {
  const Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::matrix(2, 3, {6, 5, 4, 3, 2, 1});
  CHECK(add(a, b)[0] == 7.0);
  CHECK(sub(a, b)[5] == 5.0);
  CHECK(mul(a, b)[1] == 10.0);
  CHECK(scale(a, 2.0)[2] == 6.0);

  const Tensor rows = reduce_sum(a, 0);
  CHECK(rows.shape() == std::vector<std::size_t>{3});
  CHECK(rows[0] == 5.0);
  const Tensor cols = reduce_mean(a, 1);
  CHECK(cols[0] == 2.0);
  const Tensor mx = reduce_max(a, 1);
  CHECK(mx[1] == 6.0);

  // argmax ties resolve to the lowest index
  const Tensor ties = Tensor::matrix(1, 4, {2, 7, 7, 1});
  CHECK(argmax(ties, 1)[0] == 1);
}

TEST_CASE("concat and gather_rows") {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
  const Tensor v = concat({a, b}, 0);
  CHECK(v.shape() == std::vector<std::size_t>{4, 2});
  CHECK(v(2, 0) == 5.0);
  const Tensor h = concat({a, b}, 1);
  CHECK(h.shape() == std::vector<std::size_t>{2, 4});
  CHECK(h(0, 2) == 5.0);
  CHECK_THROWS_AS(concat({a, Tensor({3, 3})}, 0), ShapeError);

  const Tensor g = gather_rows(v, {3, 0});
  CHECK(g(0, 1) == 8.0);
  CHECK(g(1, 0) == 1.0);
  CHECK_THROWS_AS(gather_rows(v, {9}), ShapeError);
}

TEST_CASE("cosine similarity") {
  const Tensor a = Tensor::matrix(2, 3, {1, 0, 0, 0, 2, 0});
  const Tensor b = Tensor::matrix(2, 3, {3, 0, 0, 0, 0, 5});
  const Tensor s = cosine_similarity(a, b);
  CHECK(s(0, 0) == doctest::Approx(1.0));
  CHECK(s(0, 1) == doctest::Approx(0.0));
  CHECK(s(1, 0) == doctest::Approx(0.0));
  CHECK(s(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("rng determinism and fork independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42);
  Rng f1 = c.fork(0), f2 = c.fork(1);
  CHECK(f1.next_u64() != f2.next_u64());
  CHECK(Rng(42).fork(0).next_u64() == Rng(42).fork(0).next_u64());

  // truncated normal respects the clip
  Rng d(7);
  for (int i = 0; i < 5000; ++i) CHECK(std::abs(d.truncated_normal(0.02)) <= 0.04);
}

TEST_CASE("rng uniform range and shuffle determinism") {
  Rng a(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  std::vector<int> v1{1, 2, 3, 4, 5, 6}, v2{1, 2, 3, 4, 5, 6};
  Rng s1(9), s2(9);
  s1.shuffle(v1);
  s2.shuffle(v2);
  CHECK(v1 == v2);
}

#include <doctest.h>

#include <cmath>
#include <vector>

#include "iformer/ref_kernels.hpp"
#include "iformer/rng.hpp"
#include "iformer/tensor.hpp"

using namespace iformer;

namespace {

double max_rel_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double da = a.data()[i], db = b.data()[i];
    double denom = std::max(1.0, std::abs(db));
    worst = std::max(worst, std::abs(da - db) / denom);
  }
  return worst;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) && a.vec() == b.vec();
}

struct ThreadGuard {
  int saved = num_threads();
  ~ThreadGuard() { set_num_threads(saved); }
};

}  // namespace

TEST_CASE("tensor construction and element access") {
  Tensor t({2, 3});
  CHECK(t.rank() == 2);
  CHECK(t.numel() == 6);
  for (int64_t i = 0; i < 6; ++i) CHECK(t.data()[i] == 0.0f);

  t.at({1, 2}) = 5.0f;
  CHECK(t.at({1, 2}) == 5.0f);
  CHECK(t.vec()[5] == 5.0f);

  Tensor f = Tensor::full({2, 2}, 3.0f);
  for (float v : f.vec()) CHECK(v == 3.0f);
  CHECK(Tensor::ones({3}).vec() == std::vector<float>{1.0f, 1.0f, 1.0f});

  CHECK(t.shape_str() == "[2,3]");
  CHECK_THROWS_AS(Tensor({2, -1}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
  CHECK_THROWS_AS(t.at({0}), ShapeError);
}

TEST_CASE("reshape preserves order and infers one extent") {
  Tensor t({2, 6});
  for (int64_t i = 0; i < 12; ++i) t.data()[i] = float(i);

  Tensor r = reshape(t, {3, 4});
  CHECK(r.shape() == std::vector<int64_t>{3, 4});
  for (int64_t i = 0; i < 12; ++i) CHECK(r.data()[i] == float(i));

  Tensor inferred = reshape(t, {2, -1, 2});
  CHECK(inferred.shape() == std::vector<int64_t>{2, 3, 2});

  CHECK_THROWS_AS(reshape(t, {5, 2}), ShapeError);
  CHECK_THROWS_AS(reshape(t, {-1, -1}), ShapeError);
  CHECK_THROWS_AS(reshape(t, {-1, 5}), ShapeError);
}

TEST_CASE("permute physically reorders data") {
  // x[n][c][h][w] = 1000n + 100c + 10h + w over [2,3,2,2]; after permuting to
  // [2,2,3,2] (axes 0,2,1,3) the element at [n][h][c][w] must be the same value.
  Tensor t({2, 3, 2, 2});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t h = 0; h < 2; ++h)
        for (int64_t w = 0; w < 2; ++w) t.at({n, c, h, w}) = float(1000 * n + 100 * c + 10 * h + w);

  Tensor p = permute(t, {0, 2, 1, 3});
  CHECK(p.shape() == std::vector<int64_t>{2, 2, 3, 2});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t h = 0; h < 2; ++h)
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t w = 0; w < 2; ++w)
          CHECK(p.at({n, h, c, w}) == float(1000 * n + 100 * c + 10 * h + w));

  // Round trip restores the original bytes.
  Tensor back = permute(p, {0, 2, 1, 3});
  CHECK(bitwise_equal(back, t));

  CHECK_THROWS_AS(permute(t, {0, 1, 2}), ShapeError);
  CHECK_THROWS_AS(permute(t, {0, 1, 2, 2}), ShapeError);
  CHECK_THROWS_AS(permute(t, {0, 1, 2, 4}), ShapeError);
}

TEST_CASE("layout counter records permutes but never reshapes") {
  Tensor t({2, 3, 4});
  LayoutCounter counter;
  {
    LayoutCounterScope scope(counter);
    (void)reshape(t, {6, 4});
    (void)reshape(t, {-1});
    CHECK(counter.permutes == 0);
    (void)permute(t, {1, 0, 2});
    CHECK(counter.permutes == 1);
    (void)permute(t, {0, 1, 2});  // identity order still physically copies
    CHECK(counter.permutes == 2);
  }
  // Outside the scope nothing is recorded.
  (void)permute(t, {1, 0, 2});
  CHECK(counter.permutes == 2);

  // Scopes nest and restore the previous counter.
  LayoutCounter outer, inner;
  {
    LayoutCounterScope a(outer);
    {
      LayoutCounterScope b(inner);
      (void)permute(t, {1, 0, 2});
    }
    (void)permute(t, {1, 0, 2});
  }
  CHECK(inner.permutes == 1);
  CHECK(outer.permutes == 1);
}

TEST_CASE("elementwise add and mul") {
  Tensor a({2}, {0.5f, 2.0f});
  Tensor b({2}, {0.5f, 0.25f});
  CHECK(mul(a, b).vec() == std::vector<float>{0.25f, 0.5f});
  CHECK(add(a, b).vec() == std::vector<float>{1.0f, 2.25f});

  // Rank-4 against per-channel rank-1 broadcasts over N,H,W.
  Tensor x({1, 2, 1, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor scale({2}, {10.0f, 100.0f});
  CHECK(mul(x, scale).vec() == std::vector<float>{10.0f, 20.0f, 300.0f, 400.0f});
  CHECK(add(x, scale).vec() == std::vector<float>{11.0f, 12.0f, 103.0f, 104.0f});

  Tensor c({3}, {1.0f, 2.0f, 3.0f});
  CHECK_THROWS_AS(add(a, c), ShapeError);
  CHECK_THROWS_AS(mul(x, c), ShapeError);
}

TEST_CASE("matmul matches a hand oracle") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c.vec() == std::vector<float>{19, 22, 43, 50});

  // Transpose flags read the operand transposed: a^T b and a b^T.
  Tensor ta = matmul(a, b, true, false);
  CHECK(ta.vec() == std::vector<float>{26, 30, 38, 44});
  Tensor tb = matmul(a, b, false, true);
  CHECK(tb.vec() == std::vector<float>{17, 23, 39, 53});

  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor({2, 2, 3}), Tensor({3, 3, 2})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor({4}), Tensor({4})), ShapeError);
}

TEST_CASE("matmul agrees with the reference across random cases") {
  Rng rng(100);
  int cases = 0;
  for (int iter = 0; iter < 25; ++iter) {
    int64_t m = rng.uniform_int(1, 6), k = rng.uniform_int(1, 6), n = rng.uniform_int(1, 6);
    for (int flags = 0; flags < 4; ++flags) {
      bool ta = flags & 1, tb = flags & 2;
      std::vector<int64_t> sa = ta ? std::vector<int64_t>{k, m} : std::vector<int64_t>{m, k};
      std::vector<int64_t> sb = tb ? std::vector<int64_t>{n, k} : std::vector<int64_t>{k, n};
      bool batched = iter % 2 == 1;
      int64_t bsz = rng.uniform_int(1, 3);
      if (batched) {
        sa.insert(sa.begin(), bsz);
        sb.insert(sb.begin(), bsz);
      }
      Tensor a = rng.uniform_tensor(sa, -2.0f, 2.0f);
      Tensor b = rng.uniform_tensor(sb, -2.0f, 2.0f);
      Tensor got = matmul(a, b, ta, tb);
      Tensor want = ref::matmul_ref(a, b, ta, tb);
      CHECK(max_rel_diff(got, want) <= 1e-6);
      ++cases;
    }
  }
  CHECK(cases == 100);
}

TEST_CASE("batched matmul applies per batch entry") {
  // Batch 0 is an identity product, batch 1 doubles.
  Tensor a({2, 2, 2}, {1, 0, 0, 1, 2, 0, 0, 2});
  Tensor b({2, 2, 2}, {1, 2, 3, 4, 1, 2, 3, 4});
  Tensor c = matmul(a, b);
  CHECK(c.vec() == std::vector<float>{1, 2, 3, 4, 2, 4, 6, 8});
  CHECK_THROWS_AS(matmul(Tensor({2, 2, 2}), Tensor({3, 2, 2})), ShapeError);
}

TEST_CASE("chunk and concat are exact inverses") {
  Rng rng(7);
  Tensor x = rng.uniform_tensor({2, 6, 3, 4}, -1.0f, 1.0f);
  auto parts = chunk_channels(x, 3);
  REQUIRE(parts.size() == 3);
  for (const Tensor& p : parts) CHECK(p.shape() == std::vector<int64_t>{2, 2, 3, 4});
  // Slice content matches direct indexing.
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 6; ++c)
      for (int64_t h = 0; h < 3; ++h)
        for (int64_t w = 0; w < 4; ++w)
          CHECK(parts[size_t(c / 2)].at({n, c % 2, h, w}) == x.at({n, c, h, w}));
  CHECK(bitwise_equal(concat_channels(parts), x));

  CHECK_THROWS_AS(chunk_channels(x, 4), ShapeError);   // 6 % 4 != 0
  CHECK_THROWS_AS(chunk_channels(x, 0), ArgumentError);
  CHECK_THROWS_AS(concat_channels({}), ArgumentError);
  auto bad = parts;
  bad[1] = Tensor({2, 2, 3, 5});
  CHECK_THROWS_AS(concat_channels(bad), ShapeError);
}

TEST_CASE("threading changes nothing but wall time") {
  ThreadGuard guard;
  Rng rng(11);
  Tensor a = rng.uniform_tensor({3, 17, 23}, -1.0f, 1.0f);
  Tensor b = rng.uniform_tensor({3, 23, 19}, -1.0f, 1.0f);

  set_num_threads(1);
  Tensor single = matmul(a, b);
  set_num_threads(4);
  Tensor multi = matmul(a, b);
  CHECK(bitwise_equal(single, multi));

  CHECK_THROWS_AS(set_num_threads(0), ArgumentError);

  // parallel_for covers the index range exactly once for any worker count.
  std::vector<int> hits(103, 0);
  parallel_for(103, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) hits[size_t(i)] += 1;
  });
  for (int h : hits) CHECK(h == 1);
}

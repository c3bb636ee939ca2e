#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <random>

#include "dcnet/tensor.hpp"
#include "oracles.hpp"

namespace dcnet {
namespace {

using testing::naive_matmul;
using testing::random_tensor;

TEST(Tensor, ShapeMustMatchValues) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor<double>({2, 0}), DimensionError);
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t(1, 2), 6.0);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  auto r = t.reshaped({3, 2});
  EXPECT_EQ(r(2, 1), 6.0);
  EXPECT_THROW(t.reshape({4, 2}), DimensionError);
}

TEST(Tensor, StorageIs64ByteAligned) {
  for (std::size_t n : {1u, 3u, 17u, 1000u}) {
    Tensor<float> t({n});
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data()) % 64, 0u);
  }
}

TEST(Tensor, SliceAndConcatRows) {
  Tensor<double> t({3, 2}, {1, 2, 3, 4, 5, 6});
  auto s = t.slice_rows(1, 3);
  EXPECT_EQ(s.shape(), (Shape{2, 2}));
  EXPECT_EQ(s(0, 0), 3.0);
  auto c = concat_rows(s, t);
  EXPECT_EQ(c.dim(0), 5u);
  EXPECT_EQ(c(4, 1), 6.0);
  EXPECT_THROW(concat_rows(t, Tensor<double>({2, 3})), DimensionError);
}

TEST(Tensor, RequireFiniteNamesContext) {
  Tensor<double> t({2});
  t[1] = std::nan("");
  try {
    require_finite(t, "probe");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("probe"), std::string::npos);
  }
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    auto a = random_tensor<double>({7, 5}, rng);
    auto b = random_tensor<double>({5, 3}, rng);
    EXPECT_LT(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-10);
  }
}

TEST(Matmul, TransposedVariants) {
  std::mt19937_64 rng(12);
  auto a = random_tensor<double>({6, 4}, rng);
  auto b = random_tensor<double>({5, 4}, rng);
  auto c = random_tensor<double>({6, 5}, rng);
  EXPECT_LT(max_abs_diff(matmul_nt(a, b), naive_matmul(a, transpose(b))), 1e-12);
  EXPECT_LT(max_abs_diff(matmul_tn(a, c), naive_matmul(transpose(a), c)), 1e-12);
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Gemm, AllTransposeCombinations) {
  std::mt19937_64 rng(13);
  const std::size_t m = 4, n = 3, k = 5;
  auto a = random_tensor<double>({m, k}, rng);
  auto b = random_tensor<double>({k, n}, rng);
  auto c0 = random_tensor<double>({m, n}, rng);
  const auto at = transpose(a), bt = transpose(b);
  const auto ref = naive_matmul(a, b);
  for (auto ta : {Trans::No, Trans::Yes}) {
    for (auto tb : {Trans::No, Trans::Yes}) {
      Tensor<double> c = c0;
      gemm(ta, tb, m, n, k, 2.0, (ta == Trans::No ? a : at).data(),
           (tb == Trans::No ? b : bt).data(), 0.5, c.data());
      for (std::size_t i = 0; i < m * n; ++i) EXPECT_NEAR(c[i], 2 * ref[i] + 0.5 * c0[i], 1e-12);
    }
  }
}

TEST(Gemm, BetaZeroIgnoresGarbage) {
  Tensor<double> a({1, 1}, {2}), b({1, 1}, {3}), c({1, 1}, {std::nan("")});
  gemm(Trans::No, Trans::No, 1, 1, 1, 1.0, a.data(), b.data(), 0.0, c.data());
  EXPECT_EQ(c[0], 6.0);
}

TEST(RowNorms, Examples) {
  Tensor<double> m({3, 2}, {3, 4, 0, 0, 1, 1});
  auto n = row_norms(m);
  EXPECT_DOUBLE_EQ(n[0], 5.0);
  EXPECT_EQ(n[1], 0.0);
  EXPECT_DOUBLE_EQ(n[2], std::sqrt(2.0));
  Tensor<double> ones({1, 9}, 1.0);
  EXPECT_DOUBLE_EQ(row_norms(ones)[0], 3.0);
}

TEST(RowNorms, SquareIsRowSumOfSquares) {
  std::mt19937_64 rng(14);
  for (int rep = 0; rep < 10; ++rep) {
    auto m = random_tensor<double>({9, 13}, rng, -3, 3);
    auto n = row_norms(m);
    for (std::size_t r = 0; r < 9; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 13; ++c) s += m(r, c) * m(r, c);
      EXPECT_NEAR(n[r] * n[r], s, 1e-12);
      EXPECT_GE(n[r], 0.0);
    }
  }
}

TEST(Reductions, DotSumNorm) {
  Tensor<double> a({3}, {1, 2, 2}), b({3}, {1, 0, -1});
  EXPECT_EQ(dot(a, b), -1.0);
  EXPECT_EQ(sum(a), 5.0);
  EXPECT_DOUBLE_EQ(l2_norm(a), 3.0);
  axpy(2.0, b, a);
  EXPECT_EQ(a[0], 3.0);
  EXPECT_EQ(scaled(b, -1.0)[2], 1.0);
}

}  // namespace
}  // namespace dcnet

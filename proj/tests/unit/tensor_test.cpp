#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mmfusion/error.hpp"
#include "mmfusion/rng.hpp"
#include "mmfusion/tensor.hpp"

using namespace mmfusion;

TEST(Tensor, SizeMatchesShapeProduct) {
  Tensor<float> t({3, 4}, 1.5f);
  EXPECT_EQ(t.size(), 12u);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_EQ(t(2, 3), 1.5f);
  EXPECT_EQ(shape_string(t.shape()), "[3x4]");
}

TEST(Tensor, RejectsZeroDimensionAndLengthMismatch) {
  EXPECT_THROW(Tensor<float>({0, 3}), Error);
  try {
    Tensor<double>({2, 2}, std::vector<double>{1, 2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(Tensor, VectorIsOneRow) {
  Tensor<float> v({5});
  EXPECT_EQ(v.rows(), 1u);
  EXPECT_EQ(v.cols(), 5u);
  auto s = Tensor<float>::scalar(2.0f);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.size(), 1u);
}

TEST(Tensor, GradHasSameShapeAndIsLazy) {
  Tensor<double> t({2, 3}, 1.0);
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(t.grad(), Error);
  auto g = t.ensure_grad();
  EXPECT_EQ(g.size(), t.size());
  for (double x : g) EXPECT_EQ(x, 0.0);
  g[4] = 3.0;
  t.zero_grad();
  EXPECT_EQ(t.grad()[4], 0.0);
  t.clear_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor<float> t({2, 6}, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  t.reshape({3, 4});
  EXPECT_EQ(t(1, 0), 4.0f);
  EXPECT_THROW(t.reshape({5, 2}), Error);
}

TEST(Tensor, CastPreservesValues) {
  Tensor<float> t({3}, std::vector<float>{0.1f, -2.0f, 7.25f});
  Tensor<double> d = t.cast<double>();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(d[i], static_cast<double>(t[i]));
}

TEST(Error, CategoryPrefixes) {
  EXPECT_EQ(category_name(ErrorKind::dimension), "dimension_error");
  EXPECT_EQ(category_name(ErrorKind::configuration), "config_error");
  EXPECT_EQ(category_name(ErrorKind::format), "format_error");
  EXPECT_EQ(category_name(ErrorKind::corruption), "corruption_error");
  EXPECT_EQ(category_name(ErrorKind::io), "io_error");
  EXPECT_EQ(category_name(ErrorKind::usage), "usage_error");
  EXPECT_EQ(category_name(ErrorKind::lookup), "lookup_error");
}

TEST(RngStream, SameSeedSameSequence) {
  RngStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  EXPECT_EQ(a.counter(), 1000u);
  RngStream c(42), d(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(c.normal(), d.normal());
}

TEST(RngStream, DifferentSeedsDiffer) {
  RngStream a(1), b(2);
  EXPECT_NE(a.next_u64(), b.next_u64());
}

TEST(RngStream, CounterTracksDraws) {
  RngStream r(7);
  EXPECT_EQ(r.counter(), 0u);
  r.uniform();
  EXPECT_GE(r.counter(), 1u);
  const auto before = r.counter();
  r.next_u64();
  EXPECT_EQ(r.counter(), before + 1);
}

TEST(RngStream, DerivedStreamsAreIndependentAndStable) {
  const RngStream root(9);
  RngStream x1 = root.derive("dropout"), x2 = root.derive("dropout");
  RngStream y = root.derive("shuffle");
  RngStream z = root.derive(std::uint64_t{3});
  const auto a = x1.next_u64();
  EXPECT_EQ(a, x2.next_u64());
  EXPECT_NE(a, y.next_u64());
  EXPECT_NE(a, z.next_u64());
  EXPECT_EQ(root.counter(), 0u);
}

TEST(RngStream, UniformAndBelowRanges) {
  RngStream r(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto b = r.below(7);
    ASSERT_LT(b, 7u);
    seen.insert(b);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(RngStream, NormalMoments) {
  RngStream r(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal(2.0, 3.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 2.0, 3.0 * 3.0 / std::sqrt(n) * 3.0);
  EXPECT_NEAR(var, 9.0, 0.15);
}

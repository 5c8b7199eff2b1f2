#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mmfusion/error.hpp"
#include "mmfusion/ops.hpp"
#include "oracles.hpp"
#include "tensors.hpp"

using namespace mmfusion;
using testing_support::make;
using testing_support::random_tensor;

namespace {

std::vector<double> vals(Var<double> v) { return std::vector<double>(v.values().begin(), v.values().end()); }

void expect_near_all(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::usage;
}

}  // namespace

// matmul

TEST(Matmul, IdentityLeavesMatrix) {
  Tape<double> tape(false);
  auto c = ops::matmul(tape.constant(make<double>({2, 2}, {1, 0, 0, 1})),
                       tape.constant(make<double>({2, 2}, {5, 6, 7, 8})));
  EXPECT_EQ(vals(c), (std::vector<double>{5, 6, 7, 8}));
}

TEST(Matmul, HandWorkedProduct) {
  Tape<double> tape(false);
  auto c = ops::matmul(tape.constant(make<double>({2, 2}, {1, 2, 3, 4})),
                       tape.constant(make<double>({2, 2}, {5, 6, 7, 8})));
  EXPECT_EQ(vals(c), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, ZeroMatrix) {
  Tape<double> tape(false);
  std::mt19937_64 gen(1);
  auto c = ops::matmul(tape.constant(Tensor<double>({3, 4})), tape.constant(random_tensor<double>(gen, {4, 2})));
  for (double x : vals(c)) EXPECT_EQ(x, 0.0);
}

TEST(Matmul, RandomAgainstLoopOracle) {
  std::mt19937_64 gen(2);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 2}, {7, 16, 9}, {33, 65, 17}}) {
    Tape<double> tape(false);
    auto a = random_tensor<double>(gen, {m, k});
    auto b = random_tensor<double>(gen, {k, n});
    auto c = ops::matmul(tape.constant(a), tape.constant(b));
    expect_near_all(vals(c), oracle::matmul(oracle::to_double(a), oracle::to_double(b), m, k, n), 1e-12);
    auto bt = ops::matmul(tape.constant(a), tape.constant(Tensor<double>({n, k}, oracle::transpose(
                                                                                       oracle::to_double(b), k, n))),
                          true);
    expect_near_all(vals(bt), vals(c), 1e-12);
  }
}

// Sizes large enough to reach the blocked BLAS kernels, forward and backward.
template <typename T>
void check_large_product(std::size_t m, std::size_t k, std::size_t n, double tol) {
  std::mt19937_64 gen(m * 31 + k * 7 + n);
  auto a = random_tensor<T>(gen, {m, k});
  auto b = random_tensor<T>(gen, {k, n});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape<T> tape;
  auto c = ops::matmul(tape.bind(a), tape.bind(b));
  tape.backward(ops::sum(c));
  const auto ad = oracle::to_double(a), bd = oracle::to_double(b);
  const auto want = oracle::matmul(ad, bd, m, k, n);
  const double scale = tol * std::sqrt(double(k));
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(double(c.values()[i]) - want[i]));
  EXPECT_LE(worst, scale) << m << "x" << k << "x" << n;
  // d sum(AB) / dA[i,p] = sum_j B[p,j]; d / dB[p,j] = sum_i A[i,p].
  worst = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) row += bd[p * n + j];
      worst = std::max(worst, std::abs(double(a.grad()[i * k + p]) - row));
    }
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < m; ++i) col += ad[i * k + p];
      worst = std::max(worst, std::abs(double(b.grad()[p * n + j]) - col));
    }
  EXPECT_LE(worst, tol * std::sqrt(double(std::max(m, n)))) << m << "x" << k << "x" << n;
}

TEST(Matmul, LargeProductsAgainstLoopOracle) {
  for (auto [m, k, n] : {std::array<std::size_t, 3>{200, 200, 200}, {32, 3072, 768}, {2, 768, 900}}) {
    check_large_product<double>(m, k, n, 1e-12);
    check_large_product<float>(m, k, n, 1e-5);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<float> tape(false);
  try {
    ops::matmul(tape.constant(Tensor<float>({2, 3})), tape.constant(Tensor<float>({4, 5})));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x5]"), std::string::npos);
  }
}

TEST(Matmul, GroupedIsBlockDiagonal) {
  std::mt19937_64 gen(3);
  const std::size_t g = 3, m = 2, k = 4, n = 5;
  auto a = random_tensor<double>(gen, {g * m, k});
  auto b = random_tensor<double>(gen, {g * k, n});
  Tape<double> tape(false);
  auto c = vals(ops::matmul_grouped(tape.constant(a), tape.constant(b), g));
  for (std::size_t i = 0; i < g; ++i) {
    oracle::Mat ai(a.data().begin() + i * m * k, a.data().begin() + (i + 1) * m * k);
    oracle::Mat bi(b.data().begin() + i * k * n, b.data().begin() + (i + 1) * k * n);
    auto want = oracle::matmul(ai, bi, m, k, n);
    expect_near_all(std::vector<double>(c.begin() + i * m * n, c.begin() + (i + 1) * m * n), want, 1e-12);
  }
}

// softmax

TEST(Softmax, UniformLogits) {
  Tape<double> tape(false);
  auto y = vals(ops::softmax_rows(tape.constant(make<double>({1, 3}, {0, 0, 0}))));
  for (double v : y) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LogThree) {
  Tape<double> tape(false);
  auto y = vals(ops::softmax_rows(tape.constant(make<double>({1, 2}, {0, std::log(3.0)}))));
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariance) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor<double>(gen, {4, 7}, 3.0);
    Tensor<double> shifted = x;
    for (auto& v : shifted.data()) v += 123.456;
    Tape<double> tape(false);
    expect_near_all(vals(ops::softmax_rows(tape.constant(x))), vals(ops::softmax_rows(tape.constant(shifted))), 1e-12);
  }
}

TEST(Softmax, RowsArePositiveAndSumToOne) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<std::size_t> dim(1, 60);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t r = dim(gen), c = dim(gen);
    auto x = random_tensor<float>(gen, {r, c}, 10.0);
    Tape<float> tape(false);
    auto y = ops::softmax_rows(tape.constant(x)).values();
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        ASSERT_GT(y[i * c + j], 0.0f);
        s += y[i * c + j];
      }
      ASSERT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, HugeLogitsStayFinite) {
  Tape<float> tape(false);
  auto y = ops::softmax_rows(tape.constant(make<float>({1, 3}, {1e30, 1e30, -1e30}))).values();
  for (float v : y) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(y[0], 0.5f, 1e-6);
}

TEST(Softmax, AttentionOutputIsConvexCombinationOfValues) {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rq = 1 + trial % 5, rk = 1 + trial % 11, d = 4;
    Tape<double> tape(false);
    auto q = tape.constant(random_tensor<double>(gen, {rq, d}, 2.0));
    auto k = tape.constant(random_tensor<double>(gen, {rk, d}, 2.0));
    auto vt = random_tensor<double>(gen, {rk, d}, 2.0);
    auto w = ops::softmax_rows(ops::scale(ops::matmul(q, k, true), 0.5));
    auto o = ops::matmul(w, tape.constant(vt)).values();
    for (std::size_t col = 0; col < d; ++col) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t r = 0; r < rk; ++r) {
        lo = std::min(lo, vt(r, col));
        hi = std::max(hi, vt(r, col));
      }
      for (std::size_t r = 0; r < rq; ++r) {
        ASSERT_GE(o[r * d + col], lo - 1e-12);
        ASSERT_LE(o[r * d + col], hi + 1e-12);
      }
    }
  }
}

// conv1d

TEST(Conv1d, IdentityKernel) {
  std::mt19937_64 gen(7);
  auto x = random_tensor<double>(gen, {6, 3});
  Tensor<double> kernel({1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) kernel[c * 3 + c] = 1.0;
  Tape<double> tape(false);
  auto y = ops::conv1d_same(tape.constant(x), tape.constant(kernel), tape.constant(Tensor<double>({3})));
  EXPECT_EQ(vals(y), testing_support::values(x));
}

TEST(Conv1d, HandWorkedWidthTwo) {
  Tape<double> tape(false);
  auto y = ops::conv1d_same(tape.constant(make<double>({3, 1}, {1, 2, 3})),
                            tape.constant(make<double>({2, 1, 1}, {1, 1})), tape.constant(Tensor<double>({1})));
  EXPECT_EQ(vals(y), (std::vector<double>{3, 5, 3}));
}

TEST(Conv1d, ZeroKernelGivesBias) {
  std::mt19937_64 gen(8);
  Tape<double> tape(false);
  auto y = ops::conv1d_same(tape.constant(random_tensor<double>(gen, {5, 2})), tape.constant(Tensor<double>({3, 2, 4})),
                            tape.constant(make<double>({4}, {1, -2, 3.5, 0})));
  auto v = vals(y);
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(v[t * 4 + 0], 1.0);
    EXPECT_EQ(v[t * 4 + 1], -2.0);
    EXPECT_EQ(v[t * 4 + 2], 3.5);
    EXPECT_EQ(v[t * 4 + 3], 0.0);
  }
}

TEST(Conv1d, KernelWiderThanSequenceIsConfigError) {
  Tape<double> tape(false);
  EXPECT_EQ(kind_of([&] {
              ops::conv1d_same(tape.constant(Tensor<double>({2, 1})), tape.constant(Tensor<double>({3, 1, 1})),
                               tape.constant(Tensor<double>({1})));
            }),
            ErrorKind::configuration);
}

TEST(Conv1d, PreservesLength) {
  std::mt19937_64 gen(9);
  for (std::size_t k = 1; k <= 5; ++k) {
    for (std::size_t len = 5; len <= 64; ++len) {
      Tape<float> tape(false);
      auto y = ops::conv1d_same(tape.constant(random_tensor<float>(gen, {len, 2})),
                                tape.constant(random_tensor<float>(gen, {k, 2, 3})),
                                tape.constant(Tensor<float>({3})));
      ASSERT_EQ(y.shape(), (Shape{len, 3})) << "k=" << k << " L=" << len;
    }
  }
}

TEST(Conv1d, RandomAgainstPaddedLoopOracle) {
  std::mt19937_64 gen(10);
  for (std::size_t k = 1; k <= 5; ++k) {
    const std::size_t len = 9, c_in = 4, f = 3;
    auto x = random_tensor<double>(gen, {len, c_in});
    auto kern = random_tensor<double>(gen, {k, c_in, f});
    auto b = random_tensor<double>(gen, {f});
    Tape<double> tape(false);
    auto y = ops::conv1d_same(tape.constant(x), tape.constant(kern), tape.constant(b));
    expect_near_all(vals(y),
                    oracle::conv_same(oracle::to_double(x), oracle::to_double(kern), oracle::to_double(b), len, c_in, k,
                                      f),
                    1e-12);
  }
}

TEST(Conv1d, SegmentsDoNotLeak) {
  std::mt19937_64 gen(11);
  const std::size_t len = 7, c_in = 3, f = 2, segs = 4, k = 5;
  auto x = random_tensor<double>(gen, {segs * len, c_in});
  auto kern = random_tensor<double>(gen, {k, c_in, f});
  auto b = random_tensor<double>(gen, {f});
  Tape<double> tape(false);
  auto y = vals(ops::conv1d_same(tape.constant(x), tape.constant(kern), tape.constant(b), len));
  for (std::size_t s = 0; s < segs; ++s) {
    oracle::Mat xs(x.data().begin() + s * len * c_in, x.data().begin() + (s + 1) * len * c_in);
    auto want = oracle::conv_same(xs, oracle::to_double(kern), oracle::to_double(b), len, c_in, k, f);
    expect_near_all(std::vector<double>(y.begin() + s * len * f, y.begin() + (s + 1) * len * f), want, 1e-12);
  }
}

// maxpool

TEST(Maxpool, HandWorkedWindows) {
  Tape<double> tape(false);
  auto y = ops::maxpool1d(tape.constant(make<double>({6, 1}, {1, 5, 2, 4, 0, 9})));
  EXPECT_EQ(vals(y), (std::vector<double>{5, 9}));
}

TEST(Maxpool, ConstantInput) {
  Tape<double> tape(false);
  auto y = vals(ops::maxpool1d(tape.constant(Tensor<double>({9, 2}, 2.5))));
  EXPECT_EQ(y.size(), 6u);
  for (double v : y) EXPECT_EQ(v, 2.5);
}

TEST(Maxpool, RemainderDropped) {
  Tape<double> tape(false);
  auto y = ops::maxpool1d(tape.constant(make<double>({7, 1}, {0, 0, 0, 0, 0, 0, 100})));
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(vals(y), (std::vector<double>{0, 0}));
}

TEST(Maxpool, TooShortIsConfigError) {
  Tape<double> tape(false);
  EXPECT_EQ(kind_of([&] { ops::maxpool1d(tape.constant(Tensor<double>({2, 3}))); }), ErrorKind::configuration);
}

TEST(Maxpool, TieRoutesGradientToFirst) {
  Tensor<double> x = make<double>({3, 1}, {4, 4, 4});
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::sum(ops::maxpool1d(tape.bind(x))));
  EXPECT_EQ(testing_support::values(Tensor<double>({3}, std::vector<double>(x.grad().begin(), x.grad().end()))),
            (std::vector<double>{1, 0, 0}));
}

TEST(Maxpool, RandomAgainstOracle) {
  std::mt19937_64 gen(12);
  auto x = random_tensor<double>(gen, {32, 5});
  Tape<double> tape(false);
  expect_near_all(vals(ops::maxpool1d(tape.constant(x))), oracle::maxpool(oracle::to_double(x), 32, 5, 3), 0.0);
}

// linear

TEST(Linear, ZeroWeightsGiveBiasRows) {
  std::mt19937_64 gen(13);
  Tape<double> tape(false);
  auto y = vals(ops::linear(tape.constant(random_tensor<double>(gen, {3, 4})), tape.constant(Tensor<double>({4, 2})),
                            tape.constant(make<double>({2}, {0.5, -1}))));
  EXPECT_EQ(y, (std::vector<double>{0.5, -1, 0.5, -1, 0.5, -1}));
}

TEST(Linear, IdentityWeights) {
  std::mt19937_64 gen(14);
  auto x = random_tensor<double>(gen, {3, 3});
  Tensor<double> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  Tape<double> tape(false);
  EXPECT_EQ(vals(ops::linear(tape.constant(x), tape.constant(eye), tape.constant(Tensor<double>({3})))),
            testing_support::values(x));
}

TEST(Linear, RandomAgainstOracle) {
  std::mt19937_64 gen(15);
  auto x = random_tensor<double>(gen, {5, 7});
  auto w = random_tensor<double>(gen, {7, 3});
  auto b = random_tensor<double>(gen, {3});
  Tape<double> tape(false);
  expect_near_all(vals(ops::linear(tape.constant(x), tape.constant(w), tape.constant(b))),
                  oracle::linear(oracle::to_double(x), oracle::to_double(w), oracle::to_double(b), 5, 7, 3), 1e-12);
}

TEST(Linear, VectorInputStaysVector) {
  Tape<double> tape(false);
  auto y = ops::linear(tape.constant(Tensor<double>({4}, 1.0)), tape.constant(Tensor<double>({4, 2}, 1.0)),
                       tape.constant(Tensor<double>({2})));
  EXPECT_EQ(y.shape(), (Shape{2}));
}

TEST(Linear, ShapeMismatch) {
  Tape<double> tape(false);
  EXPECT_EQ(kind_of([&] {
              ops::linear(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({4, 2})),
                          tape.constant(Tensor<double>({2})));
            }),
            ErrorKind::dimension);
  EXPECT_EQ(kind_of([&] {
              ops::linear(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({3, 2})),
                          tape.constant(Tensor<double>({5})));
            }),
            ErrorKind::dimension);
}

// layer norm

TEST(LayerNorm, ConstantRowIsNearZero) {
  Tape<double> tape(false);
  auto y = vals(ops::layer_norm(tape.constant(Tensor<double>({1, 8}, 3.0)), tape.constant(Tensor<double>({8}, 1.0)),
                                tape.constant(Tensor<double>({8}))));
  for (double v : y) EXPECT_LE(std::abs(v), std::sqrt(1e-5));
}

TEST(LayerNorm, PlusMinusOne) {
  Tape<double> tape(false);
  auto y = vals(ops::layer_norm(tape.constant(make<double>({1, 2}, {1, -1})), tape.constant(Tensor<double>({2}, 1.0)),
                                tape.constant(Tensor<double>({2}))));
  const double want = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], want, 1e-12);
  EXPECT_NEAR(y[1], -want, 1e-12);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  std::mt19937_64 gen(16);
  auto bias = random_tensor<double>(gen, {5});
  Tape<double> tape(false);
  auto y = vals(ops::layer_norm(tape.constant(random_tensor<double>(gen, {3, 5})), tape.constant(Tensor<double>({5})),
                                tape.constant(bias)));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(y[r * 5 + c], bias[c]);
}

TEST(LayerNorm, NormalizedRowStatistics) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cols = 2 + trial % 40;
    auto x = random_tensor<float>(gen, {6, cols}, 5.0);
    Tape<float> tape(false);
    auto y = ops::layer_norm(tape.constant(x), tape.constant(Tensor<float>({cols}, 1.0f)),
                             tape.constant(Tensor<float>({cols})))
                 .values();
    for (std::size_t r = 0; r < 6; ++r) {
      double in_mean = 0, in_var = 0, mean = 0, var = 0;
      for (std::size_t c = 0; c < cols; ++c) in_mean += x(r, c) / double(cols);
      for (std::size_t c = 0; c < cols; ++c) in_var += (x(r, c) - in_mean) * (x(r, c) - in_mean) / double(cols);
      if (in_var < 1e-1) continue;
      for (std::size_t c = 0; c < cols; ++c) mean += y[r * cols + c] / double(cols);
      for (std::size_t c = 0; c < cols; ++c) var += (y[r * cols + c] - mean) * (y[r * cols + c] - mean) / double(cols);
      EXPECT_LT(std::abs(mean), 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-4);
    }
  }
}

TEST(LayerNorm, RandomAgainstOracle) {
  std::mt19937_64 gen(18);
  auto x = random_tensor<double>(gen, {4, 9});
  auto g = random_tensor<double>(gen, {9});
  auto b = random_tensor<double>(gen, {9});
  Tape<double> tape(false);
  expect_near_all(vals(ops::layer_norm(tape.constant(x), tape.constant(g), tape.constant(b))),
                  oracle::layer_norm(oracle::to_double(x), oracle::to_double(g), oracle::to_double(b), 4, 9), 1e-12);
}

TEST(LayerNorm, SingleColumnIsConfigError) {
  Tape<double> tape(false);
  EXPECT_EQ(kind_of([&] {
              ops::layer_norm(tape.constant(Tensor<double>({3, 1})), tape.constant(Tensor<double>({1})),
                              tape.constant(Tensor<double>({1})));
            }),
            ErrorKind::configuration);
}

// dropout

TEST(Dropout, EvalIsExactIdentity) {
  std::mt19937_64 gen(19);
  RngStream rng(1);
  Tape<float> tape(false);
  auto x = tape.constant(random_tensor<float>(gen, {10, 10}));
  auto y = ops::dropout(x, 0.3, false, rng);
  EXPECT_EQ(y.id(), x.id());
  EXPECT_EQ(rng.counter(), 0u);
}

TEST(Dropout, ZeroRateIsIdentity) {
  RngStream rng(1);
  Tape<float> tape(false);
  auto x = tape.constant(Tensor<float>({4, 4}, 2.0f));
  auto y = ops::dropout(x, 0.0, true, rng);
  EXPECT_EQ(std::vector<float>(y.values().begin(), y.values().end()), std::vector<float>(16, 2.0f));
}

TEST(Dropout, InvertedScalingStatistics) {
  const std::size_t n = 100000;
  const double p = 0.3;
  RngStream rng(2);
  Tape<double> tape(false);
  auto y = vals(ops::dropout(tape.constant(Tensor<double>({n}, 1.0)), p, true, rng));
  const double keep = 1.0 / (1.0 - p);
  double sum = 0.0;
  for (double v : y) {
    ASSERT_TRUE(v == 0.0 || v == keep);
    sum += v;
  }
  const double sigma = std::sqrt(p / (1.0 - p) / static_cast<double>(n));
  EXPECT_NEAR(sum / static_cast<double>(n), 1.0, 3.0 * sigma);
}

TEST(Dropout, SeededReproducible) {
  std::mt19937_64 gen(20);
  auto x = random_tensor<float>(gen, {50, 20});
  auto run = [&] {
    RngStream rng(77);
    Tape<float> tape(false);
    auto y = ops::dropout(tape.constant(x), 0.3, true, rng).values();
    return std::vector<float>(y.begin(), y.end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Dropout, RateOfOneIsConfigError) {
  RngStream rng(1);
  Tape<float> tape(false);
  auto x = tape.constant(Tensor<float>({2}));
  EXPECT_EQ(kind_of([&] { ops::dropout(x, 1.0, true, rng); }), ErrorKind::configuration);
  EXPECT_EQ(kind_of([&] { ops::dropout(x, -0.1, false, rng); }), ErrorKind::configuration);
}

// activations

TEST(Activation, Relu) {
  Tape<double> tape(false);
  EXPECT_EQ(vals(ops::relu(tape.constant(make<double>({3}, {-1, 0, 2})))), (std::vector<double>{0, 0, 2}));
}

TEST(Activation, Sigmoid) {
  Tape<double> tape(false);
  auto y = vals(ops::sigmoid(tape.constant(make<double>({3}, {0, 30, -30}))));
  EXPECT_EQ(y[0], 0.5);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
  EXPECT_NEAR(y[2], 0.0, 1e-9);
  EXPECT_GT(y[2], 0.0);
  EXPECT_LT(y[1], 1.0);
}

TEST(Activation, SigmoidStrictlyInsideUnitIntervalForFloats) {
  Tape<float> tape(false);
  auto y = ops::sigmoid(tape.constant(make<float>({4}, {-80, -15, 15, 80}))).values();
  for (float v : y) EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(y[1], 0.0f);
}

// elementwise max

TEST(ElementwiseMax, Idempotent) {
  std::mt19937_64 gen(21);
  auto v = random_tensor<double>(gen, {3, 4});
  Tape<double> tape(false);
  std::vector<Var<double>> same(4, tape.constant(v));
  EXPECT_EQ(vals(ops::elementwise_max(same)), testing_support::values(v));
}

TEST(ElementwiseMax, HandWorked) {
  Tape<double> tape(false);
  auto y = ops::elementwise_max<double>({tape.constant(make<double>({2}, {1, 5})), tape.constant(make<double>({2}, {3, 2}))});
  EXPECT_EQ(vals(y), (std::vector<double>{3, 5}));
}

TEST(ElementwiseMax, PermutationInvariant) {
  std::mt19937_64 gen(22);
  Tape<double> tape(false);
  std::vector<Var<double>> in;
  for (int i = 0; i < 4; ++i) in.push_back(tape.constant(random_tensor<double>(gen, {5, 3})));
  const auto ref = vals(ops::elementwise_max(in));
  std::sort(in.begin(), in.end(), [](auto a, auto b) { return a.id() < b.id(); });
  do {
    ASSERT_EQ(vals(ops::elementwise_max(in)), ref);
  } while (std::next_permutation(in.begin(), in.end(), [](auto a, auto b) { return a.id() < b.id(); }));
}

TEST(ElementwiseMax, ShapeMismatchAndArity) {
  Tape<double> tape(false);
  auto a = tape.constant(Tensor<double>({2, 3}));
  auto b = tape.constant(Tensor<double>({3, 2}));
  EXPECT_EQ(kind_of([&] { ops::elementwise_max<double>({a, b}); }), ErrorKind::dimension);
  EXPECT_THROW(ops::elementwise_max<double>({a}), Error);
}

TEST(ElementwiseMax, TieRoutesGradientToFirstInput) {
  Tensor<double> a({2}, 1.0), b({2}, 1.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(ops::sum(ops::elementwise_max<double>({tape.bind(a), tape.bind(b)})));
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(a.grad()[1], 1.0);
  EXPECT_EQ(b.grad()[0], 0.0);
}

// residual add

TEST(ResidualAdd, AddingZero) {
  std::mt19937_64 gen(23);
  auto x = random_tensor<double>(gen, {3, 3});
  Tape<double> tape(false);
  EXPECT_EQ(vals(ops::residual_add(tape.constant(x), tape.constant(Tensor<double>({3, 3})))),
            testing_support::values(x));
}

TEST(ResidualAdd, ZeroInitializedBranchPassesSkip) {
  std::mt19937_64 gen(24);
  auto x = random_tensor<double>(gen, {6, 4});
  Tape<double> tape(false);
  auto h = tape.constant(x);
  auto branch = ops::relu(ops::conv1d_same(h, tape.constant(Tensor<double>({3, 4, 4})), tape.constant(Tensor<double>({4}))));
  EXPECT_EQ(vals(ops::residual_add(h, branch)), testing_support::values(x));
}

TEST(ResidualAdd, RandomAgainstElementwiseSum) {
  std::mt19937_64 gen(25);
  auto x = random_tensor<double>(gen, {4, 5});
  auto y = random_tensor<double>(gen, {4, 5});
  Tape<double> tape(false);
  auto z = vals(ops::residual_add(tape.constant(x), tape.constant(y)));
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], x[i] + y[i]);
  EXPECT_EQ(kind_of([&] { ops::residual_add(tape.constant(x), tape.constant(Tensor<double>({5, 4}))); }),
            ErrorKind::dimension);
}

// shape plumbing

TEST(Concat, RowsInterleaveByGroup) {
  Tape<double> tape(false);
  auto a = tape.constant(make<double>({4, 1}, {1, 2, 3, 4}));
  auto b = tape.constant(make<double>({2, 1}, {10, 20}));
  EXPECT_EQ(vals(ops::concat_rows<double>({a, b}, 2)), (std::vector<double>{1, 2, 10, 3, 4, 20}));
}

TEST(Concat, Cols) {
  Tape<double> tape(false);
  auto a = tape.constant(make<double>({2, 1}, {1, 2}));
  auto b = tape.constant(make<double>({2, 2}, {3, 4, 5, 6}));
  EXPECT_EQ(vals(ops::concat_cols<double>({a, b})), (std::vector<double>{1, 3, 4, 2, 5, 6}));
  EXPECT_THROW(ops::concat_cols<double>({a, tape.constant(Tensor<double>({3, 1}))}), Error);
}

TEST(BceLoss, MeanOverBatch) {
  Tape<double> tape(false);
  const std::vector<double> labels{1, 0};
  auto l = ops::bce_loss(tape.constant(make<double>({2, 1}, {0.9, 0.5})), std::span<const double>(labels));
  EXPECT_NEAR(l.item(), 0.5 * (-std::log(0.9) + std::log(2.0)), 1e-15);
}

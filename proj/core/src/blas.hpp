#pragma once

#include <cblas.h>

#include <Eigen/Core>

#include <cstddef>

namespace mmfusion::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
                 std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// Double goes through Eigen: OpenBLAS 0.3.20 selects a Cooperlake dgemm
// kernel on AVX512-BF16 parts that returns wrong sums for moderately sized
// products (200^3 and up), and the kernel is chosen at load time.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                 const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
                 double* c, std::size_t ldc) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  Eigen::Map<const RowMajor, 0, Stride> A(a, ei(trans_a ? k : m), ei(trans_a ? m : k), Stride(ei(lda)));
  Eigen::Map<const RowMajor, 0, Stride> B(b, ei(trans_b ? n : k), ei(trans_b ? k : n), Stride(ei(ldb)));
  Eigen::Map<RowMajor, 0, Stride> C(c, ei(m), ei(n), Stride(ei(ldc)));
  if (beta == 0.0) {
    C.setZero();
  } else if (beta != 1.0) {
    C *= beta;
  }
  if (trans_a && trans_b) {
    C.noalias() += alpha * A.transpose() * B.transpose();
  } else if (trans_a) {
    C.noalias() += alpha * A.transpose() * B;
  } else if (trans_b) {
    C.noalias() += alpha * A * B.transpose();
  } else {
    C.noalias() += alpha * A * B;
  }
}

}  // namespace mmfusion::detail

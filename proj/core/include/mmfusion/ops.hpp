#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmfusion/rng.hpp"
#include "mmfusion/tape.hpp"

// Differentiable primitives. All operate on 2-D row-major views; a rank-1
// tensor is a single row. Results live on the tape of their first argument.
namespace mmfusion::ops {

enum class Activation { relu, sigmoid };

// a[m x k] * b[k x n]. With transpose_b, b is [n x k] and b^T is used.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false);

// Block-diagonal product: a holds `groups` stacked [m x k] blocks, b holds
// `groups` stacked [k x n] blocks (or [n x k] with transpose_b); block g of the
// result is a_g * b_g.
template <typename T>
Var<T> matmul_grouped(Var<T> a, Var<T> b, std::size_t groups, bool transpose_b = false);

// x[m x p] * w[p x q] + bias[q] broadcast over rows.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

// Same-padded 1-D cross-correlation along rows. kernel is [k x C_in x F]; x
// holds stacked sequences of `segment_length` rows each (0 means one sequence
// spanning all rows). Left pad floor((k-1)/2), right pad ceil((k-1)/2).
template <typename T>
Var<T> conv1d_same(Var<T> x, Var<T> kernel, Var<T> bias, std::size_t segment_length = 0);

// Non-overlapping max pooling over rows within each segment; trailing rows that
// do not fill a window are dropped. Ties route gradient to the first maximum.
template <typename T>
Var<T> maxpool1d(Var<T> x, std::size_t pool = 3, std::size_t segment_length = 0);

template <typename T>
Var<T> softmax_rows(Var<T> x);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5);

// Inverted dropout. Identity (the same Var) when not training or p == 0.
template <typename T>
Var<T> dropout(Var<T> x, double p, bool training, RngStream& rng);

template <typename T>
Var<T> activation(Var<T> x, Activation kind);

template <typename T>
Var<T> relu(Var<T> x) { return activation(x, Activation::relu); }

template <typename T>
Var<T> sigmoid(Var<T> x) { return activation(x, Activation::sigmoid); }

template <typename T>
Var<T> elementwise_max(const std::vector<Var<T>>& inputs);

template <typename T>
Var<T> residual_add(Var<T> x, Var<T> y);

template <typename T>
Var<T> mul(Var<T> x, Var<T> y);

template <typename T>
Var<T> scale(Var<T> x, double factor);

template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

// Column-wise concatenation of inputs with equal row counts.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& inputs);

// Each input holds `groups` stacked blocks; block g of the result is the
// vertical stack of block g of every input.
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& inputs, std::size_t groups = 1);

// Mean binary cross-entropy of probabilities p (any shape) against labels.
// Probabilities are clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var<T> bce_loss(Var<T> p, std::span<const T> labels);

}  // namespace mmfusion::ops

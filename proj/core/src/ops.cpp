#include "mmfusion/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "blas.hpp"
#include "mmfusion/error.hpp"

namespace mmfusion::ops {

namespace {

template <typename T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
  if (!a.valid() || !b.valid()) fail(ErrorKind::usage, "operation on an empty Var");
  if (&a.tape() != &b.tape()) fail(ErrorKind::usage, "operands recorded on different tapes");
  return a.tape();
}

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) fail(ErrorKind::usage, "operation on an empty Var");
  return a.tape();
}

std::string pair_string(const Shape& a, const Shape& b) {
  return shape_string(a) + " and " + shape_string(b);
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void column_sums_into(std::span<T> dst, std::span<const T> src, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = src.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += row[c];
  }
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

std::size_t segment_count(std::size_t rows, std::size_t segment, const char* op) {
  if (segment == 0 || rows % segment != 0) {
    fail(ErrorKind::dimension, std::string(op) + ": " + std::to_string(rows) +
                                   " rows are not a whole number of segments of length " +
                                   std::to_string(segment));
  }
  return rows / segment;
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b) {
  return matmul_grouped(a, b, 1, transpose_b);
}

template <typename T>
Var<T> matmul_grouped(Var<T> a, Var<T> b, std::size_t groups, bool transpose_b) {
  Tape<T>& tape = tape_of(a, b);
  if (groups == 0 || a.rows() % groups != 0 || b.rows() % groups != 0) {
    fail(ErrorKind::dimension, "matmul: cannot split " + pair_string(a.shape(), b.shape()) + " into " +
                                   std::to_string(groups) + " groups");
  }
  const std::size_t m = a.rows() / groups;
  const std::size_t k = a.cols();
  const std::size_t b_rows = b.rows() / groups;
  const std::size_t b_cols = b.cols();
  const std::size_t inner = transpose_b ? b_cols : b_rows;
  const std::size_t n = transpose_b ? b_rows : b_cols;
  if (inner != k) {
    fail(ErrorKind::dimension, "matmul: inner dimensions disagree for " + pair_string(a.shape(), b.shape()));
  }

  std::vector<T> out(groups * m * n);
  auto av = a.values();
  auto bv = b.values();
  const std::size_t b_block = b_rows * b_cols;
  for (std::size_t g = 0; g < groups; ++g) {
    detail::gemm(false, transpose_b, m, n, k, T(1), av.data() + g * m * k, k, bv.data() + g * b_block,
                 b_cols, T(0), out.data() + g * m * n, n);
  }

  const auto ai = a.id(), bi = b.id();
  return tape.record(matrix_shape(groups * m, n), std::move(out), {ai, bi},
                     [=](Tape<T>& t, std::size_t self) {
                       auto dc = t.grad(self);
                       auto av = t.values(ai);
                       auto bv = t.values(bi);
                       if (t.requires_grad(ai)) {
                         auto da = t.grad(ai);
                         for (std::size_t g = 0; g < groups; ++g) {
                           // dA = dC * op(B)^T
                           detail::gemm(false, !transpose_b, m, k, n, T(1), dc.data() + g * m * n, n,
                                        bv.data() + g * b_block, b_cols, T(1), da.data() + g * m * k, k);
                         }
                       }
                       if (t.requires_grad(bi)) {
                         auto db = t.grad(bi);
                         for (std::size_t g = 0; g < groups; ++g) {
                           if (transpose_b) {
                             detail::gemm(true, false, n, k, m, T(1), dc.data() + g * m * n, n,
                                          av.data() + g * m * k, k, T(1), db.data() + g * b_block, k);
                           } else {
                             detail::gemm(true, false, k, n, m, T(1), av.data() + g * m * k, k,
                                          dc.data() + g * m * n, n, T(1), db.data() + g * b_block, n);
                           }
                         }
                       }
                     });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  Tape<T>& tape = tape_of(x, w);
  tape_of(x, bias);
  const std::size_t m = x.rows();
  const std::size_t p = x.cols();
  if (w.shape().size() != 2 || w.shape()[0] != p) {
    fail(ErrorKind::dimension, "linear: input " + pair_string(x.shape(), w.shape()) + " do not agree");
  }
  const std::size_t q = w.shape()[1];
  if (bias.size() != q) {
    fail(ErrorKind::dimension, "linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                                   shape_string(w.shape()));
  }

  std::vector<T> out(m * q);
  auto bv = bias.values();
  for (std::size_t r = 0; r < m; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * q);
  detail::gemm(false, false, m, q, p, T(1), x.values().data(), p, w.values().data(), q, T(1), out.data(), q);

  Shape shape = x.shape().size() == 1 ? Shape{q} : matrix_shape(m, q);
  const auto xi = x.id(), wi = w.id(), bi = bias.id();
  return tape.record(std::move(shape), std::move(out), {xi, wi, bi}, [=](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    if (t.requires_grad(xi)) {
      detail::gemm(false, true, m, p, q, T(1), dy.data(), q, t.values(wi).data(), q, T(1), t.grad(xi).data(), p);
    }
    if (t.requires_grad(wi)) {
      detail::gemm(true, false, p, q, m, T(1), t.values(xi).data(), p, dy.data(), q, T(1), t.grad(wi).data(), q);
    }
    if (t.requires_grad(bi)) column_sums_into<T>(t.grad(bi), dy, m, q);
  });
}

template <typename T>
Var<T> conv1d_same(Var<T> x, Var<T> kernel, Var<T> bias, std::size_t segment_length) {
  Tape<T>& tape = tape_of(x, kernel);
  tape_of(x, bias);
  const Shape& ks = kernel.shape();
  if (ks.size() != 3) fail(ErrorKind::dimension, "conv1d: kernel must be [k x C_in x F], got " + shape_string(ks));
  const std::size_t k = ks[0], c_in = ks[1], filters = ks[2];
  const std::size_t rows = x.rows();
  if (x.cols() != c_in) {
    fail(ErrorKind::dimension, "conv1d: input " + pair_string(x.shape(), ks) + " disagree on channels");
  }
  if (bias.size() != filters) {
    fail(ErrorKind::dimension, "conv1d: bias " + shape_string(bias.shape()) + " does not match " +
                                   std::to_string(filters) + " filters");
  }
  const std::size_t length = segment_length == 0 ? rows : segment_length;
  const std::size_t segments = segment_count(rows, length, "conv1d");
  if (k > length) {
    fail(ErrorKind::configuration, "conv1d: kernel width " + std::to_string(k) + " exceeds sequence length " +
                                       std::to_string(length));
  }
  const std::ptrdiff_t pad_left = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(length);

  // Valid output positions [t0, t1) for tap j read input position t + offset.
  auto tap_range = [=](std::size_t j) {
    const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(j) - pad_left;
    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -offset);
    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(len, len - offset);
    return std::tuple{offset, t0, t1};
  };

  std::vector<T> out(rows * filters);
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * filters);
  {
    std::vector<T> tap(rows * filters);
    auto xv = x.values();
    auto kv = kernel.values();
    for (std::size_t j = 0; j < k; ++j) {
      detail::gemm(false, false, rows, filters, c_in, T(1), xv.data(), c_in, kv.data() + j * c_in * filters,
                   filters, T(0), tap.data(), filters);
      auto [offset, t0, t1] = tap_range(j);
      for (std::size_t s = 0; s < segments; ++s) {
        for (std::ptrdiff_t t = t0; t < t1; ++t) {
          T* dst = out.data() + (s * length + t) * filters;
          const T* src = tap.data() + (s * length + t + offset) * filters;
          for (std::size_t f = 0; f < filters; ++f) dst[f] += src[f];
        }
      }
    }
  }

  const auto xi = x.id(), ki = kernel.id(), bi = bias.id();
  return tape.record(matrix_shape(rows, filters), std::move(out), {xi, ki, bi},
                     [=](Tape<T>& t, std::size_t self) {
                       auto dy = t.grad(self);
                       if (t.requires_grad(bi)) column_sums_into<T>(t.grad(bi), dy, rows, filters);
                       const bool need_x = t.requires_grad(xi);
                       const bool need_k = t.requires_grad(ki);
                       if (!need_x && !need_k) return;
                       auto xv = t.values(xi);
                       auto kv = t.values(ki);
                       // Output gradient moved onto the input rows each tap reads.
                       std::vector<T> shifted(rows * filters);
                       for (std::size_t j = 0; j < k; ++j) {
                         std::fill(shifted.begin(), shifted.end(), T(0));
                         auto [offset, t0, t1] = tap_range(j);
                         for (std::size_t s = 0; s < segments; ++s) {
                           for (std::ptrdiff_t p = t0; p < t1; ++p) {
                             const T* src = dy.data() + (s * length + p) * filters;
                             std::copy(src, src + filters, shifted.data() + (s * length + p + offset) * filters);
                           }
                         }
                         if (need_k) {
                           detail::gemm(true, false, c_in, filters, rows, T(1), xv.data(), c_in, shifted.data(),
                                        filters, T(1), t.grad(ki).data() + j * c_in * filters, filters);
                         }
                         if (need_x) {
                           detail::gemm(false, true, rows, c_in, filters, T(1), shifted.data(), filters,
                                        kv.data() + j * c_in * filters, filters, T(1), t.grad(xi).data(), c_in);
                         }
                       }
                     });
}

template <typename T>
Var<T> maxpool1d(Var<T> x, std::size_t pool, std::size_t segment_length) {
  Tape<T>& tape = tape_of(x);
  const std::size_t rows = x.rows();
  const std::size_t channels = x.cols();
  const std::size_t length = segment_length == 0 ? rows : segment_length;
  const std::size_t segments = segment_count(rows, length, "maxpool1d");
  if (pool == 0 || length < pool) {
    fail(ErrorKind::configuration, "maxpool1d: sequence length " + std::to_string(length) +
                                       " is shorter than pool " + std::to_string(pool));
  }
  const std::size_t pooled = length / pool;
  std::vector<T> out(segments * pooled * channels);
  std::vector<std::size_t> argmax(out.size());
  auto xv = x.values();
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t p = 0; p < pooled; ++p) {
      const std::size_t first = s * length + p * pool;
      const std::size_t o = (s * pooled + p) * channels;
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t best = first * channels + c;
        for (std::size_t w = 1; w < pool; ++w) {
          const std::size_t idx = (first + w) * channels + c;
          if (xv[idx] > xv[best]) best = idx;
        }
        out[o + c] = xv[best];
        argmax[o + c] = best;
      }
    }
  }
  const auto xi = x.id();
  return tape.record(matrix_shape(segments * pooled, channels), std::move(out), {xi},
                     [xi, argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
                       auto dy = t.grad(self);
                       auto dx = t.grad(xi);
                       for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
                     });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  const std::size_t rows = x.rows(), cols = x.cols();
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T* o = out.data() + r * cols;
    const T peak = *std::max_element(in, in + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - peak);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  const auto xi = x.id();
  return tape.record(x.shape(), std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    auto y = t.values(self);
    auto dx = t.grad(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * cols;
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[base + c] * y[base + c];
      for (std::size_t c = 0; c < cols; ++c) dx[base + c] += y[base + c] * (dy[base + c] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps) {
  Tape<T>& tape = tape_of(x, gain);
  tape_of(x, bias);
  const std::size_t rows = x.rows(), cols = x.cols();
  if (cols < 2) fail(ErrorKind::configuration, "layer_norm: rows need at least 2 entries");
  if (gain.size() != cols || bias.size() != cols) {
    fail(ErrorKind::dimension, "layer_norm: gain/bias " + pair_string(gain.shape(), bias.shape()) +
                                   " do not match width " + std::to_string(cols));
  }
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<T> normalized(xv.size());
  std::vector<T> inv_std(rows);
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    double mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<double>(cols);
    double var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(inv);
    for (std::size_t c = 0; c < cols; ++c) {
      const T xhat = static_cast<T>((in[c] - mean) * inv);
      normalized[r * cols + c] = xhat;
      out[r * cols + c] = gv[c] * xhat + bv[c];
    }
  }
  const auto xi = x.id(), gi = gain.id(), bi = bias.id();
  return tape.record(x.shape(), std::move(out), {xi, gi, bi},
                     [=, normalized = std::move(normalized), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                                           std::size_t self) {
                       auto dy = t.grad(self);
                       if (t.requires_grad(bi)) column_sums_into<T>(t.grad(bi), dy, rows, cols);
                       if (t.requires_grad(gi)) {
                         auto dg = t.grad(gi);
                         for (std::size_t i = 0; i < dy.size(); ++i) dg[i % cols] += dy[i] * normalized[i];
                       }
                       if (!t.requires_grad(xi)) return;
                       auto gv = t.values(gi);
                       auto dx = t.grad(xi);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t base = r * cols;
                         T mean_d = 0, mean_dx = 0;
                         for (std::size_t c = 0; c < cols; ++c) {
                           const T d = dy[base + c] * gv[c];
                           mean_d += d;
                           mean_dx += d * normalized[base + c];
                         }
                         mean_d /= static_cast<T>(cols);
                         mean_dx /= static_cast<T>(cols);
                         for (std::size_t c = 0; c < cols; ++c) {
                           const T d = dy[base + c] * gv[c];
                           dx[base + c] += inv_std[r] * (d - mean_d - normalized[base + c] * mean_dx);
                         }
                       }
                     });
}

template <typename T>
Var<T> dropout(Var<T> x, double p, bool training, RngStream& rng) {
  Tape<T>& tape = tape_of(x);
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorKind::configuration, "dropout: rate must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto xv = x.values();
  std::vector<T> mask(xv.size());
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < p ? T(0) : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  const auto xi = x.id();
  return tape.record(x.shape(), std::move(out), {xi}, [xi, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    auto dx = t.grad(xi);
    for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

template <typename T>
Var<T> activation(Var<T> x, Activation kind) {
  Tape<T>& tape = tape_of(x);
  auto xv = x.values();
  std::vector<T> out(xv.size());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  } else {
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      if (v >= T(0)) {
        out[i] = T(1) / (T(1) + std::exp(-v));
      } else {
        const T e = std::exp(v);
        out[i] = e / (T(1) + e);
      }
    }
  }
  const auto xi = x.id();
  return tape.record(x.shape(), std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    auto dx = t.grad(xi);
    if (kind == Activation::relu) {
      auto xv = t.values(xi);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (xv[i] > T(0)) dx[i] += dy[i];
      }
    } else {
      auto y = t.values(self);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
    }
  });
}

template <typename T>
Var<T> elementwise_max(const std::vector<Var<T>>& inputs) {
  if (inputs.size() < 2) fail(ErrorKind::configuration, "elementwise_max needs at least two inputs");
  Tape<T>& tape = tape_of(inputs.front());
  std::vector<std::size_t> ids;
  for (const auto& v : inputs) {
    tape_of(inputs.front(), v);
    if (v.shape() != inputs.front().shape()) {
      fail(ErrorKind::dimension, "elementwise_max: shapes " + pair_string(inputs.front().shape(), v.shape()) +
                                     " differ");
    }
    ids.push_back(v.id());
  }
  const std::size_t n = inputs.front().size();
  std::vector<T> out(inputs.front().values().begin(), inputs.front().values().end());
  std::vector<std::uint8_t> winner(n, 0);
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    auto v = inputs[k].values();
    for (std::size_t i = 0; i < n; ++i) {
      if (v[i] > out[i]) {
        out[i] = v[i];
        winner[i] = static_cast<std::uint8_t>(k);
      }
    }
  }
  return tape.record(inputs.front().shape(), std::move(out), ids,
                     [ids, winner = std::move(winner)](Tape<T>& t, std::size_t self) {
                       auto dy = t.grad(self);
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.requires_grad(ids[k])) continue;
                         auto dx = t.grad(ids[k]);
                         for (std::size_t i = 0; i < winner.size(); ++i) {
                           if (winner[i] == k) dx[i] += dy[i];
                         }
                       }
                     });
}

template <typename T>
Var<T> residual_add(Var<T> x, Var<T> y) {
  Tape<T>& tape = tape_of(x, y);
  if (x.shape() != y.shape()) {
    fail(ErrorKind::dimension, "residual_add: shapes " + pair_string(x.shape(), y.shape()) + " differ");
  }
  auto xv = x.values();
  auto yv = y.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + yv[i];
  const auto xi = x.id(), yi = y.id();
  return tape.record(x.shape(), std::move(out), {xi, yi}, [=](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    if (t.requires_grad(xi)) add_into<T>(t.grad(xi), dy);
    if (t.requires_grad(yi)) add_into<T>(t.grad(yi), dy);
  });
}

template <typename T>
Var<T> mul(Var<T> x, Var<T> y) {
  Tape<T>& tape = tape_of(x, y);
  if (x.shape() != y.shape()) {
    fail(ErrorKind::dimension, "mul: shapes " + pair_string(x.shape(), y.shape()) + " differ");
  }
  auto xv = x.values();
  auto yv = y.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * yv[i];
  const auto xi = x.id(), yi = y.id();
  return tape.record(x.shape(), std::move(out), {xi, yi}, [=](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    if (t.requires_grad(xi)) {
      auto dx = t.grad(xi);
      auto yv = t.values(yi);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * yv[i];
    }
    if (t.requires_grad(yi)) {
      auto dyy = t.grad(yi);
      auto xv = t.values(xi);
      for (std::size_t i = 0; i < dy.size(); ++i) dyy[i] += dy[i] * xv[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, double factor) {
  Tape<T>& tape = tape_of(x);
  const T f = static_cast<T>(factor);
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * f;
  const auto xi = x.id();
  return tape.record(x.shape(), std::move(out), {xi}, [=](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    auto dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * f;
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  T total = 0;
  for (T v : x.values()) total += v;
  const auto xi = x.id();
  return tape.record(Shape{}, std::vector<T>{total}, {xi}, [=](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (T& d : t.grad(xi)) d += g;
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& tape = tape_of(x);
  if (shape_size(shape) != x.size()) {
    fail(ErrorKind::dimension, "reshape: " + pair_string(x.shape(), shape) + " differ in size");
  }
  auto xv = x.values();
  const auto xi = x.id();
  return tape.record(std::move(shape), std::vector<T>(xv.begin(), xv.end()), {xi},
                     [=](Tape<T>& t, std::size_t self) { add_into<T>(t.grad(xi), t.grad(self)); });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& inputs) {
  if (inputs.empty()) fail(ErrorKind::configuration, "concat_cols needs at least one input");
  Tape<T>& tape = tape_of(inputs.front());
  const std::size_t rows = inputs.front().rows();
  std::vector<std::size_t> ids, widths, offsets;
  std::size_t total = 0;
  for (const auto& v : inputs) {
    tape_of(inputs.front(), v);
    if (v.rows() != rows) {
      fail(ErrorKind::dimension, "concat_cols: row counts of " + pair_string(inputs.front().shape(), v.shape()) +
                                     " differ");
    }
    ids.push_back(v.id());
    widths.push_back(v.cols());
    offsets.push_back(total);
    total += v.cols();
  }
  std::vector<T> out(rows * total);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto v = inputs[k].values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offsets[k]);
    }
  }
  Shape shape = inputs.front().shape().size() == 1 ? Shape{total} : matrix_shape(rows, total);
  return tape.record(std::move(shape), std::move(out), ids, [=](Tape<T>& t, std::size_t self) {
    auto dy = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto dx = t.grad(ids[k]);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* src = dy.data() + r * total + offsets[k];
        T* dst = dx.data() + r * widths[k];
        for (std::size_t c = 0; c < widths[k]; ++c) dst[c] += src[c];
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& inputs, std::size_t groups) {
  if (inputs.empty()) fail(ErrorKind::configuration, "concat_rows needs at least one input");
  Tape<T>& tape = tape_of(inputs.front());
  const std::size_t cols = inputs.front().cols();
  std::vector<std::size_t> ids, block_rows;
  std::size_t rows_per_group = 0;
  for (const auto& v : inputs) {
    tape_of(inputs.front(), v);
    if (v.cols() != cols || groups == 0 || v.rows() % groups != 0) {
      fail(ErrorKind::dimension, "concat_rows: cannot stack " + pair_string(inputs.front().shape(), v.shape()) +
                                     " in " + std::to_string(groups) + " groups");
    }
    ids.push_back(v.id());
    block_rows.push_back(v.rows() / groups);
    rows_per_group += v.rows() / groups;
  }
  std::vector<T> out(groups * rows_per_group * cols);
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t row = g * rows_per_group;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto v = inputs[k].values();
      std::copy_n(v.data() + g * block_rows[k] * cols, block_rows[k] * cols, out.data() + row * cols);
      row += block_rows[k];
    }
  }
  return tape.record(matrix_shape(groups * rows_per_group, cols), std::move(out), ids,
                     [=](Tape<T>& t, std::size_t self) {
                       auto dy = t.grad(self);
                       for (std::size_t g = 0; g < groups; ++g) {
                         std::size_t row = g * rows_per_group;
                         for (std::size_t k = 0; k < ids.size(); ++k) {
                           if (t.requires_grad(ids[k])) {
                             auto dx = t.grad(ids[k]);
                             const std::size_t n = block_rows[k] * cols;
                             const T* src = dy.data() + row * cols;
                             T* dst = dx.data() + g * n;
                             for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
                           }
                           row += block_rows[k];
                         }
                       }
                     });
}

template <typename T>
Var<T> bce_loss(Var<T> p, std::span<const T> labels) {
  Tape<T>& tape = tape_of(p);
  if (labels.size() != p.size()) {
    fail(ErrorKind::dimension, "bce_loss: " + std::to_string(labels.size()) + " labels for " +
                                   std::to_string(p.size()) + " probabilities");
  }
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  auto pv = p.values();
  double total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(static_cast<double>(pv[i]), lo, hi);
    const double y = labels[i];
    total -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  const double n = static_cast<double>(pv.size());
  std::vector<T> y(labels.begin(), labels.end());
  const auto pi = p.id();
  return tape.record(Shape{}, std::vector<T>{static_cast<T>(total / n)}, {pi},
                     [=, y = std::move(y)](Tape<T>& t, std::size_t self) {
                       const double g = t.grad(self)[0] / n;
                       auto pv = t.values(pi);
                       auto dp = t.grad(pi);
                       for (std::size_t i = 0; i < pv.size(); ++i) {
                         const double q = pv[i];
                         if (q < lo || q > hi) continue;  // clamp is flat here
                         dp[i] += static_cast<T>(g * (-y[i] / q + (1.0 - y[i]) / (1.0 - q)));
                       }
                     });
}

#define MMFUSION_INSTANTIATE_OPS(T)                                                       \
  template Var<T> matmul(Var<T>, Var<T>, bool);                                            \
  template Var<T> matmul_grouped(Var<T>, Var<T>, std::size_t, bool);                       \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                          \
  template Var<T> conv1d_same(Var<T>, Var<T>, Var<T>, std::size_t);                        \
  template Var<T> maxpool1d(Var<T>, std::size_t, std::size_t);                             \
  template Var<T> softmax_rows(Var<T>);                                                    \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                              \
  template Var<T> dropout(Var<T>, double, bool, RngStream&);                               \
  template Var<T> activation(Var<T>, Activation);                                          \
  template Var<T> elementwise_max(const std::vector<Var<T>>&);                             \
  template Var<T> residual_add(Var<T>, Var<T>);                                            \
  template Var<T> mul(Var<T>, Var<T>);                                                     \
  template Var<T> scale(Var<T>, double);                                                   \
  template Var<T> sum(Var<T>);                                                             \
  template Var<T> reshape(Var<T>, Shape);                                                  \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                 \
  template Var<T> concat_rows(const std::vector<Var<T>>&, std::size_t);                    \
  template Var<T> bce_loss(Var<T>, std::span<const T>);

MMFUSION_INSTANTIATE_OPS(float)
MMFUSION_INSTANTIATE_OPS(double)

#undef MMFUSION_INSTANTIATE_OPS

}  // namespace mmfusion::ops

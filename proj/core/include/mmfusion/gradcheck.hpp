#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mmfusion/model.hpp"
#include "mmfusion/tape.hpp"
#include "mmfusion/tensor.hpp"

namespace mmfusion {

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares the tape gradient of a scalar function against central differences.
///
/// `f` is called as f(Var<T>) for the analytic pass and as f(Var<double>) for
/// the difference quotients, so a generic lambda works for both. The quotients
/// are always taken in double precision: single-precision callers get their
/// float gradient checked against a double-precision oracle. An empty
/// `coords` checks every coordinate.
template <typename T, typename Fn>
GradCheckResult finite_difference_check(Fn&& f, const Tensor<T>& x, double eps,
                                        std::span<const std::size_t> coords = {}) {
  Tensor<T> probe = x;
  probe.clear_grad();
  probe.set_requires_grad(true);
  {
    Tape<T> tape;
    Var<T> loss = f(tape.bind(probe));
    tape.backward(loss);
  }
  std::vector<T> analytic(probe.size(), T(0));
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  Tensor<double> base = x.template cast<double>();
  base.set_requires_grad(false);
  auto evaluate = [&](const Tensor<double>& point) {
    Tape<double> tape(false);
    return f(tape.constant(point)).item();
  };

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  GradCheckResult result;
  for (std::size_t i : coords) {
    const double original = base[i];
    base[i] = original + eps;
    const double up = evaluate(base);
    base[i] = original - eps;
    const double down = evaluate(base);
    base[i] = original;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = relative_error(analytic[i], numeric);
    if (err > result.max_rel_error || result.checked == 0) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
    ++result.checked;
  }
  return result;
}

struct ParameterGradCheck {
  std::string name;
  GradCheckResult result;
};

enum class CoordinateChoice {
  random,   // uniformly drawn indices
  largest,  // the indices with the largest analytic |gradient|
};

struct ModelGradCheckOptions {
  std::size_t coords_per_tensor = 3;
  CoordinateChoice choice = CoordinateChoice::random;
  // Rounding noise in the double loss is ~1e-14 relative, so 1e-6 steps leave
  // ~1e-9 of noise in each quotient; 1e-5 balances it against truncation.
  double eps = 1e-5;
  Mode mode = Mode::train;  // dropout masks are replayed identically for every evaluation
  double dropout = kDefaultDropout;
  std::uint64_t seed = 0;  // coordinate choice and dropout masks
};

/// Gradient of the mean BCE loss of the full network w.r.t. every parameter
/// tensor, checked at randomly chosen coordinates against double-precision
/// central differences.
template <typename T>
std::vector<ParameterGradCheck> check_model_gradients(const ModelParams<T>& params,
                                                      std::span<const SampleFeatures> samples,
                                                      const ModelGradCheckOptions& options);

double max_error(std::span<const ParameterGradCheck> checks);

// init_params with every bias and layer-norm term moved off its exact init
// value by U(-0.1, 0.1). Zero biases pin relu pre-activations at exactly 0
// whenever a layer's input is all zero, which puts the check on a kink.
ModelParams<double> gradcheck_point(std::uint64_t seed, const ModelDims& dims = ModelDims::standard());

}  // namespace mmfusion

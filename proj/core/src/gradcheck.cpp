#include "mmfusion/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmfusion/error.hpp"
#include "mmfusion/ops.hpp"

namespace mmfusion {

namespace {

template <typename T>
double model_loss(Tape<T>& tape, const ModelParams<T>& params, std::span<const SampleFeatures* const> samples,
                  std::span<const T> labels, const ModelGradCheckOptions& options, bool run_backward) {
  RngStream masks = RngStream(options.seed).derive("dropout");
  auto graph = record_forward<T>(tape, samples, params, ForwardOptions{options.mode, options.dropout, &masks});
  auto loss = ops::bce_loss(graph.fusion.probability, labels);
  if (run_backward) tape.backward(loss);
  return loss.item();
}

}  // namespace

template <typename T>
std::vector<ParameterGradCheck> check_model_gradients(const ModelParams<T>& params,
                                                      std::span<const SampleFeatures> samples,
                                                      const ModelGradCheckOptions& options) {
  if (samples.empty()) fail(ErrorKind::configuration, "gradient check needs at least one sample");
  std::vector<const SampleFeatures*> ptrs;
  std::vector<T> labels;
  std::vector<double> labels_d;
  for (const auto& s : samples) {
    ptrs.push_back(&s);
    labels.push_back(static_cast<T>(s.label));
    labels_d.push_back(s.label);
  }

  ModelParams<T> probe = params.template cast<T>();
  probe.set_requires_grad(true);
  {
    Tape<T> tape;
    model_loss<T>(tape, probe, ptrs, labels, options, true);
  }

  ModelParams<double> oracle = params.template cast<double>();
  auto oracle_named = oracle.named();
  auto probe_named = probe.named();
  RngStream pick = RngStream(options.seed).derive("coordinates");

  std::vector<ParameterGradCheck> out;
  for (std::size_t p = 0; p < probe_named.size(); ++p) {
    Tensor<T>& analytic_tensor = *probe_named[p].tensor;
    Tensor<double>& value = *oracle_named[p].tensor;
    ParameterGradCheck check{probe_named[p].name, {}};
    const std::size_t n = std::min(options.coords_per_tensor, value.size());
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.choice == CoordinateChoice::largest && analytic_tensor.has_grad()) {
      const auto g = analytic_tensor.grad();
      std::partial_sort(coords.begin(), coords.begin() + static_cast<std::ptrdiff_t>(n), coords.end(),
                        [&](std::size_t a, std::size_t b) { return std::abs(g[a]) > std::abs(g[b]); });
    } else if (value.size() > n) {
      for (std::size_t c = 0; c < n; ++c) coords[c] = pick.below(value.size());
    }
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t i = coords[c];
      const double analytic = analytic_tensor.has_grad() ? double(analytic_tensor.grad()[i]) : 0.0;
      const double original = value[i];
      value[i] = original + options.eps;
      double up, down;
      {
        Tape<double> tape(false);
        up = model_loss<double>(tape, oracle, ptrs, labels_d, options, false);
      }
      value[i] = original - options.eps;
      {
        Tape<double> tape(false);
        down = model_loss<double>(tape, oracle, ptrs, labels_d, options, false);
      }
      value[i] = original;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double err = relative_error(analytic, numeric);
      if (err > check.result.max_rel_error || check.result.checked == 0) {
        check.result.max_rel_error = err;
        check.result.worst_index = i;
        check.result.analytic = analytic;
        check.result.numeric = numeric;
      }
      ++check.result.checked;
    }
    out.push_back(std::move(check));
  }
  return out;
}

ModelParams<double> gradcheck_point(std::uint64_t seed, const ModelDims& dims) {
  ModelParams<double> params = init_params<double>(seed, dims);
  RngStream rng = RngStream(seed).derive("gradcheck_point");
  auto ends_with = [](const std::string& s, std::string_view tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
  };
  for (auto& p : params.named()) {
    if (!ends_with(p.name, ".bias") && !ends_with(p.name, ".gain")) continue;
    for (auto& x : p.tensor->data()) x += rng.uniform(-0.1, 0.1);
  }
  return params;
}

double max_error(std::span<const ParameterGradCheck> checks) {
  double worst = 0.0;
  for (const auto& c : checks) worst = std::max(worst, c.result.max_rel_error);
  return worst;
}

template std::vector<ParameterGradCheck> check_model_gradients(const ModelParams<float>&,
                                                               std::span<const SampleFeatures>,
                                                               const ModelGradCheckOptions&);
template std::vector<ParameterGradCheck> check_model_gradients(const ModelParams<double>&,
                                                               std::span<const SampleFeatures>,
                                                               const ModelGradCheckOptions&);

}  // namespace mmfusion

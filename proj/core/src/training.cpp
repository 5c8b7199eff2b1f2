#include "mmfusion/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmfusion/error.hpp"
#include "mmfusion/ops.hpp"
#include "mmfusion/tape.hpp"

namespace mmfusion {

void validate(const TrainConfig& config) {
  if (config.epochs < 1) fail(ErrorKind::configuration, "epochs must be >= 1");
  if (config.batch_size < 1) fail(ErrorKind::configuration, "batch size must be >= 1");
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
    fail(ErrorKind::configuration, "learning rate must be finite and >= 0");
  }
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) {
    fail(ErrorKind::configuration, "dropout must lie in [0, 1)");
  }
  if (!(config.adam_beta1 >= 0.0 && config.adam_beta1 < 1.0) ||
      !(config.adam_beta2 >= 0.0 && config.adam_beta2 < 1.0)) {
    fail(ErrorKind::configuration, "Adam betas must lie in [0, 1)");
  }
  if (!(config.adam_eps > 0.0)) fail(ErrorKind::configuration, "Adam epsilon must be > 0");
}

double bce_loss(double p, int y) {
  const double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return y == 1 ? -std::log(q) : -std::log1p(-q);
}

void adam_step(std::span<const NamedTensor<float>> params, AdamState& state, const TrainConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->shape(), 0.0f);
      state.v.emplace_back(p.tensor->shape(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) {
    fail(ErrorKind::usage, "optimizer state holds " + std::to_string(state.m.size()) + " tensors, got " +
                               std::to_string(params.size()) + " parameters");
  }
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) fail(ErrorKind::usage, "no gradient for parameter " + p.name);
  }
  ++state.t;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float>& theta = *params[i].tensor;
    if (state.m[i].shape() != theta.shape()) {
      fail(ErrorKind::usage, "optimizer state shape mismatch for " + params[i].name);
    }
    auto w = theta.data();
    auto g = theta.grad().data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double step = config.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + config.adam_eps);
      w[j] = static_cast<float>(w[j] - step);
    }
  }
}

void adam_step(ModelParams<float>& params, AdamState& state, const TrainConfig& config) {
  const auto named = params.named();
  adam_step(std::span<const NamedTensor<float>>(named), state, config);
}

std::string format_history_line(const EpochStats& stats) {
  return std::to_string(stats.epoch) + "," + format_double(stats.loss) + "," + format_double(stats.accuracy);
}

TrainResult train(std::span<const SampleFeatures> train_set, const TrainConfig& config, ModelParams<float> params,
                  const EpochCallback& on_epoch) {
  validate(config);
  if (train_set.empty()) fail(ErrorKind::configuration, "training set is empty");
  for (const auto& s : train_set) validate(s, params.dims);

  const RngStream root(config.seed);
  RngStream shuffle_rng = root.derive("shuffle");
  RngStream dropout_rng = root.derive("dropout");
  ForwardOptions options{Mode::train, config.dropout, &dropout_rng};

  params.set_requires_grad(true);
  params.zero_grad();
  AdamState state;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) {
      for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[shuffle_rng.below(i + 1)]);
      }
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<const SampleFeatures*> batch;
      std::vector<float> labels;
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&train_set[order[i]]);
        labels.push_back(static_cast<float>(train_set[order[i]].label));
      }
      Tape<float> tape;
      const ForwardGraph<float> graph = record_forward<float>(tape, batch, params, options);
      const Var<float> loss = ops::bce_loss(graph.fusion.probability, std::span<const float>(labels));
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
      const auto probs = graph.fusion.probability.values();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        correct += ((probs[i] >= 0.5f) == (batch[i]->label == 1)) ? 1 : 0;
      }
      tape.backward(loss);
      adam_step(params, state, config);
      params.zero_grad();
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(train_set.size());
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  params.set_requires_grad(false);
  for (auto& p : params.named()) p.tensor->clear_grad();
  result.params = std::move(params);
  return result;
}

TrainResult train(std::span<const SampleFeatures> train_set, const TrainConfig& config, const ModelDims& dims,
                  const EpochCallback& on_epoch) {
  validate(config);
  validate(dims);
  if (train_set.empty()) fail(ErrorKind::configuration, "training set is empty");
  return train(train_set, config, init_params<float>(config.seed, dims), on_epoch);
}

MetricsReport evaluate(const ModelParams<float>& params, std::span<const SampleFeatures> dataset,
                       double threshold) {
  if (dataset.empty()) fail(ErrorKind::configuration, "evaluation set is empty");
  const std::vector<float> probs = predict<float>(dataset, params);
  ConfusionCounts counts;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    counts.add(static_cast<double>(probs[i]) >= threshold, dataset[i].label == 1);
  }
  return MetricsReport::from_counts(counts);
}

}  // namespace mmfusion

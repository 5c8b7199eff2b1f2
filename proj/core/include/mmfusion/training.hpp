#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmfusion/metrics.hpp"
#include "mmfusion/model.hpp"

namespace mmfusion {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double dropout = kDefaultDropout;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

void validate(const TrainConfig& config);

// -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(double p, int y);

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::uint64_t t = 0;
};

// One Adam update over `params` in order; state is sized on first use.
void adam_step(std::span<const NamedTensor<float>> params, AdamState& state, const TrainConfig& config);
void adam_step(ModelParams<float>& params, AdamState& state, const TrainConfig& config);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // sample-weighted mean batch loss
  double accuracy = 0.0;
};

std::string format_history_line(const EpochStats& stats);

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

TrainResult train(std::span<const SampleFeatures> train_set, const TrainConfig& config, ModelParams<float> params,
                  const EpochCallback& on_epoch = {});

// Starts from init_params(config.seed, dims).
TrainResult train(std::span<const SampleFeatures> train_set, const TrainConfig& config,
                  const ModelDims& dims = ModelDims::standard(), const EpochCallback& on_epoch = {});

MetricsReport evaluate(const ModelParams<float>& params, std::span<const SampleFeatures> dataset,
                       double threshold = 0.5);

}  // namespace mmfusion

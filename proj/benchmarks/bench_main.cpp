#include <benchmark/benchmark.h>

#include <random>

#include "mmfusion/ops.hpp"
#include "mmfusion/synth.hpp"
#include "mmfusion/training.hpp"

using namespace mmfusion;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> nd;
  Tensor<float> t(std::move(shape));
  for (auto& x : t.data()) x = nd(gen);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Tape<float> tape(false);
    benchmark::DoNotOptimize(ops::matmul(tape.constant(a), tape.constant(b)).values().data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * double(n) * double(n) * double(n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(512)->Arg(1024)->Unit(benchmark::kMillisecond);

// First text conv layer for a batch of posts: (B*32) x 3072 against k x 3072 x 768.
void BM_TextConvForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const std::size_t k = static_cast<std::size_t>(state.range(1));
  const auto x = random_tensor({batch * 32, 3072}, 3);
  auto kernel = random_tensor({k, 3072, 768}, 4);
  auto bias = random_tensor({768}, 5);
  kernel.set_requires_grad(true);
  bias.set_requires_grad(true);
  for (auto _ : state) {
    Tape<float> tape;
    auto y = ops::conv1d_same(tape.constant(x), tape.bind(kernel), tape.bind(bias), 32);
    tape.backward(ops::sum(y));
    kernel.zero_grad();
    bias.zero_grad();
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * 2.0 * double(batch * 32) * 3072.0 * 768.0 * double(k),
                                                 benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}
BENCHMARK(BM_TextConvForwardBackward)->Args({4, 3})->Args({16, 3})->Unit(benchmark::kMillisecond);

void BM_ForwardEval(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto params = init_params<float>(1);
  const auto samples = synth_generate(1, std::max<std::size_t>(batch, 2), 2.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(predict<float>(std::span(samples).first(batch), params).data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_ForwardEval)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

// One optimizer step of the full training loop (forward, backward, Adam).
void BM_TrainStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto samples = synth_generate(1, batch, 2.0);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = batch;
  auto params = init_params<float>(1);
  for (auto _ : state) {
    auto result = train(samples, cfg, std::move(params));
    params = std::move(result.params);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_TrainStep)->Arg(16)->Unit(benchmark::kMillisecond)->Iterations(3);

void BM_AttentionBlockCompact(benchmark::State& state) {
  const auto params = init_params<float>(2, ModelDims::compact());
  const auto q = random_tensor({1, 4}, 6), kv = random_tensor({4, 4}, 7);
  for (auto _ : state) {
    Tape<float> tape(false);
    benchmark::DoNotOptimize(
        attention_block<float>(tape.constant(q), tape.constant(kv), params.text_to_image, {}, 1).fused.values().data());
  }
}
BENCHMARK(BM_AttentionBlockCompact);

}  // namespace

BENCHMARK_MAIN();

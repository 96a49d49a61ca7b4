#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rsam/layers.hpp"
#include "rsam/model.hpp"
#include "rsam/tensor.hpp"

using namespace rsam;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad = false) {
  std::normal_distribution<double> nd;
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = nd(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

void BM_Linear(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng, {128, n}), w = random_tensor(rng, {n, n}), b = random_tensor(rng, {n});
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(linear(tape, x, w, b));
  }
  state.SetItemsProcessed(state.iterations() * 128 * static_cast<std::int64_t>(n * n));
}
BENCHMARK(BM_Linear)->Arg(64)->Arg(256)->Arg(1024);

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor(rng, {32, c, 32, 32}), k = random_tensor(rng, {16, c, 3, 3});
  const Tensor b = random_tensor(rng, {16});
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(conv2d(tape, x, k, b, 1, 1));
  }
}
BENCHMARK(BM_Conv2d)->Arg(3)->Arg(16);

void BM_MaxPool(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(rng, {32, 16, 32, 32});
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(maxpool2d(tape, x, 2, 2));
  }
}
BENCHMARK(BM_MaxPool);

RsamConfig bench_config(std::size_t hw) {
  RsamConfig c;
  c.height = c.width = hw;
  c.hidden_size = 64;
  c.glimpse_features = 64;
  c.n_glimpses = 4;
  return c;
}

void BM_RsamForward(benchmark::State& state) {
  const RsamConfig cfg = bench_config(static_cast<std::size_t>(state.range(0)));
  const LayerParams params = init_rsam(cfg, 4);
  std::mt19937_64 rng(4);
  const Tensor img = random_tensor(rng, {16, 3, cfg.height, cfg.width});
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(rsam_forward(tape, img, {}, params, cfg, Mode::eval).avg_probs);
  }
}
BENCHMARK(BM_RsamForward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_RsamForwardBackward(benchmark::State& state) {
  const RsamConfig cfg = bench_config(static_cast<std::size_t>(state.range(0)));
  LayerParams params = init_rsam(cfg, 5);
  std::mt19937_64 rng(5);
  const Tensor img = random_tensor(rng, {16, 3, cfg.height, cfg.width});
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % cfg.n_classes);
  for (auto _ : state) {
    Tape tape;
    const RsamOutput out = rsam_forward(tape, img, labels, params, cfg, Mode::train);
    backward(out.loss, tape);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_RsamForwardBackward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

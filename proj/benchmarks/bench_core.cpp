#include <benchmark/benchmark.h>

#include "fer/autograd.hpp"
#include "fer/data.hpp"
#include "fer/ops.hpp"
#include "fer/sam.hpp"
#include "fer/swin.hpp"

namespace {

using namespace fer;

Tensor random(Shape shape, std::uint64_t seed, bool grad = false) {
  CounterRng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random({n, n}, 1);
  const auto b = random({n, n}, 2);
  autograd::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

// First-stage block of the toy model: 16x16 grid, 24 channels, batch 16.
struct StageOne {
  SwinConfig config;
  SwinModel model{config, 3};
  Tensor x = random({16, 16, 16, 24}, 4, true);
  BlockGeometry geometry{4, 2, 2, build_shift_mask(16, 16, 4, 2)};
  const BlockParams& block() const { return model.params().stages[0].blocks[0]; }
};

void BM_BlockForward(benchmark::State& state) {
  StageOne s;
  autograd::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(swin_block(s.x, s.block(), s.geometry));
}
BENCHMARK(BM_BlockForward)->Unit(benchmark::kMillisecond);

void BM_BlockForwardBackward(benchmark::State& state) {
  StageOne s;
  for (auto _ : state) {
    sum_all(swin_block(s.x, s.block(), s.geometry)).backward();
    s.x.clear_grad();
  }
}
BENCHMARK(BM_BlockForwardBackward)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  SwinModel model(SwinConfig{}, 5);
  const auto images = random({16, 64, 64, 3}, 6);
  autograd::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(images));
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  SwinModel model(SwinConfig{}, 7);
  const auto params = model.parameters();
  const auto images = random({16, 64, 64, 3}, 8);
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 7);
  OptimizerState opt;
  opt.sam_enabled = state.range(0) != 0;
  for (auto _ : state) {
    sam_step(params, [&] { return cross_entropy(model.forward(images).logits, labels); }, opt);
  }
  state.SetLabel(opt.sam_enabled ? "sam" : "sgd");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_MakeBatch(benchmark::State& state) {
  const auto m = synthetic_textures(4, 7, 64, 9);
  std::vector<std::size_t> idx(16);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (auto _ : state) benchmark::DoNotOptimize(make_batch(m, idx, 64));
}
BENCHMARK(BM_MakeBatch)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <vector>

#include "atseg/baselines.hpp"
#include "atseg/datasets.hpp"
#include "atseg/ops.hpp"
#include "atseg/segnet.hpp"
#include "atseg/training.hpp"

namespace {

using namespace atseg;

Tensor uniform_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Args: channels, side.
void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const Tensor x = uniform_tensor({4, c, s, s}, 1);
  const Tensor w = uniform_tensor({c, c, 3, 3}, 2);
  const Tensor b = uniform_tensor({c}, 3);
  for (auto _ : state) {
    Tape tape(false);
    Var y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 1, 1);
    benchmark::DoNotOptimize(y.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 64})->Args({32, 32})->Args({64, 16});

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const Tensor x = uniform_tensor({4, c, s, s}, 1);
  const Tensor w = uniform_tensor({c, c, 3, 3}, 2);
  const Tensor b = uniform_tensor({c}, 3);
  for (auto _ : state) {
    Tape tape;
    Var xv = tape.leaf(x);
    Var wv = tape.leaf(w);
    Var bv = tape.leaf(b);
    Var loss = sum(conv2d(xv, wv, bv, 1, 1));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(wv).data().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({16, 64})->Args({32, 32})->Args({64, 16});

UNetConfig default_net() { return UNetConfig{}; }

void BM_UNetForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const SegModel model = init_params(default_net(), 1);
  const Tensor batch = uniform_tensor({n, 1, 64, 64}, 4, 0.0f, 1.0f);
  for (auto _ : state) {
    Prediction p = predict(model, batch);
    benchmark::DoNotOptimize(p.threshold.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_UNetForward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  SegModel model = init_params(default_net(), 1);
  const std::vector<Sample> samples = gen_synthetic(4, 64, 64, 5, true);
  const Tensor images = batch_images(samples);
  const Tensor masks = batch_masks(samples);
  AdamState adam;
  TrainConfig cfg;
  for (auto _ : state) {
    StepLosses l = train_step(model, adam, images, masks, cfg);
    benchmark::DoNotOptimize(l.total);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_LocalThreshold(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto method = static_cast<LocalMethod>(state.range(1));
  const Tensor img = uniform_tensor({side, side}, 6, 0.0f, 1.0f);
  LocalStatConfig cfg;
  cfg.method = method;
  for (auto _ : state) {
    Tensor out = local_stat_threshold(img, cfg);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}
BENCHMARK(BM_LocalThreshold)
    ->ArgsProduct({{64, 256, 1024}, {0, 1, 2}})
    ->ArgNames({"side", "method"});

// Window size should not matter.
void BM_LocalThresholdWindow(benchmark::State& state) {
  const Tensor img = uniform_tensor({256, 256}, 7, 0.0f, 1.0f);
  LocalStatConfig cfg;
  cfg.method = LocalMethod::Sauvola;
  cfg.window = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    Tensor out = local_stat_threshold(img, cfg);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_LocalThresholdWindow)->Arg(3)->Arg(15)->Arg(63)->Arg(255);

void BM_IntegralImage(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Tensor img = uniform_tensor({side, side}, 8, 0.0f, 1.0f);
  for (auto _ : state) {
    IntegralImage ii(img);
    benchmark::DoNotOptimize(ii.sum_at(side - 1, side - 1));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}
BENCHMARK(BM_IntegralImage)->Arg(64)->Arg(256)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "tierprune/autograd.hpp"
#include "tierprune/data.hpp"
#include "tierprune/model.hpp"
#include "tierprune/ops.hpp"
#include "tierprune/probe.hpp"
#include "tierprune/pruner.hpp"
#include "tierprune/training.hpp"

using namespace tierprune;

namespace {

Tensor filled(Shape shape, float v) { return Tensor(std::move(shape), v); }

Dataset images(int per_class, int size) {
  SynthOptions o;
  o.num_classes = 10;
  o.per_class = per_class;
  o.image_size = size;
  o.seed = 1;
  return synth_dataset(o);
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = filled({n, n}, 0.5f), b = filled({n, n}, 0.25f);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(tape.value(ops::matmul(tape, tape.input(a), tape.input(b))));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_LinearBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor x = filled({n, 64}, 0.1f), w = filled({256, 64}, 0.01f), b = filled({256}, 0.0f);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    tape.backward(ops::sum(tape, ops::linear(tape, tape.input(x), tape.param(w), tape.param(b))));
  }
}
BENCHMARK(BM_LinearBackward)->Arg(65)->Arg(520);

// Default mini-ViT, inference on a batch of 32 images.
static void BM_Forward(benchmark::State& state) {
  const Model m = build_model(ViTConfig{});
  const Dataset ds = images(4, 32);
  const Tensor batch = subset(ds, std::vector<std::size_t>(32, 0)).images;
  for (auto _ : state) benchmark::DoNotOptimize(m.logits(batch));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  Model m = build_model(ViTConfig{});
  const Dataset ds = subset(images(4, 32), std::vector<std::size_t>{0, 4, 8, 12, 16, 20, 24, 28});
  for (auto _ : state) benchmark::DoNotOptimize(train_step(m, ds.images, ds.labels, 1e-4f));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

// One probe trial: loss with 4 layers skipped over 100 images.
static void BM_Observe(benchmark::State& state) {
  Model m = build_model(ViTConfig{});
  const Dataset ds = images(10, 32);
  MaskTrial trial;
  trial.layer_ids = {1, 6, 11, 12};
  for (auto _ : state) benchmark::DoNotOptimize(observe(m, ds, trial));
}
BENCHMARK(BM_Observe)->Unit(benchmark::kMillisecond);

static void BM_PruneStep(benchmark::State& state) {
  const Model base = build_model(ViTConfig{});
  const auto tiers = TierAssignment::uniform(base.num_linear_groups(), Tier::kGeneric);
  PruneSchedule s;
  s.prob = 0.04;
  for (auto _ : state) {
    state.PauseTiming();
    Model m = base;
    state.ResumeTiming();
    benchmark::DoNotOptimize(prune_step(m, tiers, s, nullptr));
  }
}
BENCHMARK(BM_PruneStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

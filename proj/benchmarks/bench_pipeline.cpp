#include <benchmark/benchmark.h>

#include "tmeseg/aggregator.hpp"
#include "tmeseg/tiling.hpp"
#include "tmeseg/testkit/synth.hpp"

using namespace tmeseg;

namespace {

void BM_Aggregate(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const TeacherBundle b = testkit::synth_large(n, n, 7);
  AggregatorConfig cfg;
  cfg.workers = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(aggregate(b, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n) * n);
}
BENCHMARK(BM_Aggregate)->Args({1024, 1})->Args({1024, 4})->Args({2048, 1})->Unit(benchmark::kMillisecond);

void BM_AggregateTiled(benchmark::State& state) {
  const TeacherBundle b = testkit::synth_large(1344, 1344, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(aggregate_tiled(b, {384, 320, 96}, {}, ThresholdScope::global));
  }
}
BENCHMARK(BM_AggregateTiled)->Unit(benchmark::kMillisecond);

void BM_SeededScene(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto b = testkit::render_scene(testkit::random_scene(seed++));
    benchmark::DoNotOptimize(aggregate(b));
  }
}
BENCHMARK(BM_SeededScene);

}  // namespace

BENCHMARK_MAIN();

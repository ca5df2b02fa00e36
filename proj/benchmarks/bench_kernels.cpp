#include <benchmark/benchmark.h>

#include "tmeseg/raster.hpp"
#include "tmeseg/testkit/synth.hpp"

using namespace tmeseg;

namespace {

RgbTile noise_tile(int n) {
  testkit::Rng rng(1);
  RgbTile img(n, n);
  for (auto& p : img.pixels()) {
    p = Rgb{static_cast<std::uint8_t>(rng.range(0, 255)), static_cast<std::uint8_t>(rng.range(0, 255)),
            static_cast<std::uint8_t>(rng.range(0, 255))};
  }
  return img;
}

BitMask blobs(int n, double p) {
  testkit::Rng rng(2);
  BitMask m(n, n, 0);
  for (auto& v : m.pixels()) v = rng.chance(p);
  return m;
}

void BM_GaussianSmooth(benchmark::State& state) {
  const RgbTile img = noise_tile(static_cast<int>(state.range(0)));
  const double sigma = static_cast<double>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_smooth(img, sigma));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(img.size()));
}
BENCHMARK(BM_GaussianSmooth)->Args({512, 2})->Args({1024, 2})->Args({1024, 4})->Unit(benchmark::kMillisecond);

void BM_Otsu(benchmark::State& state) {
  const GrayRaster g = to_gray(noise_tile(1024));
  for (auto _ : state) benchmark::DoNotOptimize(otsu_threshold(g));
}
BENCHMARK(BM_Otsu)->Unit(benchmark::kMillisecond);

void BM_ConnectedComponents(benchmark::State& state) {
  const BitMask m = blobs(static_cast<int>(state.range(0)), 0.45);
  for (auto _ : state) benchmark::DoNotOptimize(connected_components(m));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m.size()));
}
BENCHMARK(BM_ConnectedComponents)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_DistanceTransform(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  BitMask disc(n, n, 0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) disc(x, y) = (x - n / 2) * (x - n / 2) + (y - n / 2) * (y - n / 2) <= n * n / 16;
  }
  for (auto _ : state) benchmark::DoNotOptimize(squared_distance_transform(disc));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(disc.size()));
}
BENCHMARK(BM_DistanceTransform)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

}  // namespace

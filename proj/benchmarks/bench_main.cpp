#include <benchmark/benchmark.h>

#include "ctmr/autograd.hpp"
#include "ctmr/cgan.hpp"
#include "ctmr/fcn.hpp"
#include "ctmr/gradcheck.hpp"
#include "ctmr/metrics.hpp"
#include "ctmr/ops.hpp"

using namespace ctmr;

namespace {

// conv2d forward: channels, spatial side, stride.
void BM_Conv2d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  const int stride = static_cast<int>(state.range(2));
  const Tensor x = random_uniform({1, c, s, s}, -1, 1, 1);
  const Tensor w = random_uniform({c, c, 3, 3}, -0.1f, 0.1f, 2);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, {}, {stride, 1, 1}));
  state.SetItemsProcessed(state.iterations() * c * c * 9 * (s / stride) * (s / stride));
}
BENCHMARK(BM_Conv2d)->Args({64, 64, 1})->Args({128, 32, 2})->Args({256, 16, 1})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  const Tensor x = random_uniform({1, c, s, s}, -1, 1, 1);
  Tensor w = random_uniform({c, c, 3, 3}, -0.1f, 0.1f, 2);
  w.set_requires_grad(true);
  for (auto _ : state) {
    Tape::local().reset();
    w.zero_grad();
    backward(sum(conv2d(x, w, {}, {1, 1, 1})));
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({64, 64})->Args({256, 16})->Unit(benchmark::kMillisecond);

void BM_GeneratorForward(benchmark::State& state) {
  auto cfg = cgan::GeneratorConfig::desk();
  cfg.image_size = static_cast<int>(state.range(0));
  const auto g = cgan::make_generator_params(cfg, 1);
  const Tensor x = random_uniform({1, 5, cfg.image_size, cfg.image_size}, -1, 1, 3);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(cgan::generator_forward(x, g, cfg, true, 4));
}
BENCHMARK(BM_GeneratorForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_CganTrainStep(benchmark::State& state) {
  auto model = cgan::CganModel::create(cgan::GeneratorConfig::desk(), cgan::DiscriminatorConfig{}, 1);
  const Tensor x = random_uniform({1, 5, 64, 64}, -1, 1, 5);
  const Tensor y = random_uniform({1, 1, 64, 64}, -1, 1, 6);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(cgan::train_step(model, x, y, 100.0f, ++seed));
}
BENCHMARK(BM_CganTrainStep)->Unit(benchmark::kMillisecond);

void BM_FcnForward(benchmark::State& state) {
  fcn::FcnConfig cfg;
  cfg.image_size = 64;
  const auto p = fcn::make_fcn_params(cfg, 1);
  const Tensor x = random_uniform({1, 5, 64, 64}, -1, 1, 7);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(fcn::fcn_forward(x, p, cfg));
}
BENCHMARK(BM_FcnForward)->Unit(benchmark::kMillisecond);

metrics::MaskVolume blob(std::int64_t d, std::int64_t s, double radius, double cx) {
  metrics::MaskVolume m{d, s, s, std::vector<std::uint8_t>(static_cast<std::size_t>(d * s * s))};
  for (std::int64_t z = 0; z < d; ++z)
    for (std::int64_t y = 0; y < s; ++y)
      for (std::int64_t x = 0; x < s; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - s / 2.0, dz = (z - d / 2.0) * 5.0;
        m.voxels[static_cast<std::size_t>((z * s + y) * s + x)] = dx * dx + dy * dy + dz * dz < radius * radius;
      }
  return m;
}

// Euclidean distance transform of a [D, S, S] volume.
void BM_DistanceTransform(benchmark::State& state) {
  const auto s = state.range(0);
  const auto m = blob(22, s, s / 5.0, s / 2.0);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::squared_distance_transform(m, Spacing{}));
  state.SetItemsProcessed(state.iterations() * 22 * s * s);
}
BENCHMARK(BM_DistanceTransform)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_SurfaceDistances(benchmark::State& state) {
  const auto s = state.range(0);
  const auto p = blob(22, s, s / 5.0, s / 2.0);
  const auto g = blob(22, s, s / 6.0, s / 2.0 + 3);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::surface_distances(p, g, Spacing{}));
}
BENCHMARK(BM_SurfaceDistances)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

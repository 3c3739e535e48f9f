#include <benchmark/benchmark.h>

#include <random>

#include "lowlight/pipeline.hpp"

using namespace lowlight;

namespace {

Image noise_image(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img = Image::chw(c, h, w);
  for (auto& v : img.values()) v = u(rng);
  return img;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  std::mt19937_64 rng(1);
  ParamSet p;
  p.add_uniform("w", {ch, ch, 3, 3}, ch * 9, rng);
  p.add_uniform("b", {ch}, ch * 9, rng);
  const auto x = ag::constant(noise_image(ch, size, size, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ag::conv2d(x, p.get("w"), p.get("b")));
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * ch * ch * 9 * size * size, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3Forward)->Args({32, 64})->Args({64, 64})->Args({32, 128})->Unit(benchmark::kMillisecond);

void BM_Conv3x3ForwardBackward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  std::mt19937_64 rng(1);
  ParamSet p;
  p.add_uniform("w", {ch, ch, 3, 3}, ch * 9, rng);
  p.add_uniform("b", {ch}, ch * 9, rng);
  p.set_trainable(true);
  const auto target = noise_image(ch, size, size, 3);
  const auto x = ag::constant(noise_image(ch, size, size, 2));
  for (auto _ : state) {
    p.zero_grad();
    ag::backward(ag::l1_loss(ag::conv2d(x, p.get("w"), p.get("b")), target));
  }
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Args({32, 64})->Args({64, 64})->Unit(benchmark::kMillisecond);

void BM_MsSsimLossAndGradient(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const auto target = noise_image(3, size, size, 4);
  const auto pred = noise_image(3, size, size, 5);
  const auto params = MsSsimParams::with_scales(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    auto x = ag::leaf(pred);
    ag::backward(ag::ms_ssim_loss(x, target, params));
    benchmark::DoNotOptimize(x->grad.data());
  }
}
BENCHMARK(BM_MsSsimLossAndGradient)->Args({128, 4})->Args({256, 5})->Unit(benchmark::kMillisecond);

void BM_EnhancerForward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Enhancer e(EnhancerConfig{}, 1);
  const Image low = noise_image(3, size, size, 6);
  const auto att = build_pyramid(compute_attention(low), 4);
  const auto edges = EdgeMap::zeros(size, size);
  for (auto _ : state) benchmark::DoNotOptimize(e.forward(low, edges, att));
}
BENCHMARK(BM_EnhancerForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_TrainerStep(benchmark::State& state) {
  const int crop = static_cast<int>(state.range(0));
  const Image gt = noise_image(3, crop, crop, 7);
  DarkenParams dp;
  PairedSample s{darken(gt, dp), gt, {}, "bench", SourceTag::synthetic};
  TrainConfig cfg;
  cfg.crop = crop;
  cfg.ms_ssim = MsSsimParams::with_scales(crop >= 176 ? 5 : 3);
  cfg.toggles.edge = false;
  cfg.checkpoint_interval = 0;
  Trainer t(cfg, {s}, std::make_shared<LumaPoolProvider>());
  for (auto _ : state) benchmark::DoNotOptimize(t.step());
}
BENCHMARK(BM_TrainerStep)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

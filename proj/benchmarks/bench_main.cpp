#include <benchmark/benchmark.h>

#include <random>

#include "musicnet/data_synth.hpp"
#include "musicnet/featurize.hpp"
#include "musicnet/model.hpp"
#include "musicnet/nn.hpp"
#include "musicnet/train.hpp"

using namespace musicnet;

namespace {

const AudioClip& tonal_clip() {
  static const AudioClip clip = gen_synthetic_stems(StemKind::tonal_music, 9.0, 1);
  return clip;
}

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

void BM_Featurize(benchmark::State& state) {
  const FeaturePlan plan = FeaturePlan::make_default();
  for (auto _ : state) benchmark::DoNotOptimize(featurize_clip(tonal_clip(), plan));
}
BENCHMARK(BM_Featurize)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  const MusicNetModel model = MusicNetModel::glorot(1);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, tonal_clip()));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_NetworkOnly(benchmark::State& state) {
  const MusicNetModel model = MusicNetModel::glorot(1);
  const LogMelFeature f = featurize_clip(tonal_clip(), model.plan);
  for (auto _ : state) benchmark::DoNotOptimize(forward_features(model, f));
}
BENCHMARK(BM_NetworkOnly)->Unit(benchmark::kMillisecond);

// Spatial size per conv stage: 900x120x1, 450x60x32, 225x30x32, 112x15x32.
void BM_Conv2d(benchmark::State& state) {
  const std::size_t h = static_cast<std::size_t>(state.range(0)), w = static_cast<std::size_t>(state.range(1));
  const std::size_t cin = static_cast<std::size_t>(state.range(2)), cout = static_cast<std::size_t>(state.range(3));
  const Tensor x = random_tensor({h, w, cin}, 1), k = random_tensor({3, 3, cin, cout}, 2), b = random_tensor({cout}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, k, b));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * h * w * cin * cout * 9));
}
BENCHMARK(BM_Conv2d)
    ->Args({900, 120, 1, 32})
    ->Args({450, 60, 32, 32})
    ->Args({225, 30, 32, 32})
    ->Args({112, 15, 32, 64})
    ->Unit(benchmark::kMillisecond);

void BM_ConvReluMaxpool(benchmark::State& state) {
  const Tensor x = random_tensor({450, 60, 32}, 1), k = random_tensor({3, 3, 32, 32}, 2), b = random_tensor({32}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d_relu_maxpool(x, k, b));
}
BENCHMARK(BM_ConvReluMaxpool)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  MusicNetModel model = MusicNetModel::glorot(1);
  const Dataset data = make_dataset(make_desk_set({4, 4, 1}), model.plan);
  TrainConfig cfg;
  cfg.batch_size = 8;
  Trainer trainer(model, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_epoch(data));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * data.size()));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace
BENCHMARK_MAIN();

#include <random>

#include <benchmark/benchmark.h>

#include "cartooner/autograd.hpp"
#include "cartooner/colorcue.hpp"
#include "cartooner/colorspace.hpp"
#include "cartooner/metrics.hpp"

namespace {

using namespace cartooner;

nn::Tensor random_tensor(nn::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  nn::Tensor t(s);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist;
  Image img(h, w, ColorSpace::RGB);
  for (double& v : img.data) v = dist(rng);
  return img;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int k = static_cast<int>(state.range(1));
  const auto x = nn::Var::constant(random_tensor({1, c, 16, 16}, 1));
  const auto w = nn::Var::constant(random_tensor({c, c, k, k}, 2));
  const auto b = nn::Var::constant(nn::Tensor({1, c, 1, 1}));
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::conv2d(x, w, b, {1, k / 2, 1}).value().data());
  }
  state.SetItemsProcessed(state.iterations() * 16LL * 16 * c * c * k * k);
}
BENCHMARK(BM_Conv2dForward)->Args({64, 3})->Args({64, 19})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto x = nn::Var::leaf(random_tensor({1, 64, 16, 16}, 1), true);
  const auto w = nn::Var::leaf(random_tensor({64, 64, 3, 3}, 2), true);
  const auto b = nn::Var::leaf(nn::Tensor({1, 64, 1, 1}), true);
  for (auto _ : state) {
    nn::mean(nn::conv2d(x, w, b, {1, 1, 1})).backward();
  }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMillisecond);

void BM_RgbToLab(benchmark::State& state) {
  const Image img = random_image(256, 256, 3);
  for (auto _ : state) benchmark::DoNotOptimize(color::rgb_to_lab(img).data.data());
  state.SetItemsProcessed(state.iterations() * 256 * 256);
}
BENCHMARK(BM_RgbToLab)->Unit(benchmark::kMillisecond);

void BM_Slic(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Image img = random_image(size, size, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cue::superpixel_colormap(img, cue::default_segment_count(size, size)).data.data());
  }
}
BENCHMARK(BM_Slic)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_HsvAugment(benchmark::State& state) {
  const Image img = random_image(64, 64, 5);
  const cue::HsvAugParams p{0.3, 1.2, 0.9};
  for (auto _ : state) benchmark::DoNotOptimize(cue::hsv_augment(img, img, p).first.data.data());
}
BENCHMARK(BM_HsvAugment)->Unit(benchmark::kMillisecond);

void BM_FrechetDistance(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  std::mt19937_64 rng(6);
  std::normal_distribution<double> dist;
  metrics::FeatureStats a(d), b(d);
  std::vector<double> x(d);
  for (int i = 0; i < 4 * d; ++i) {
    for (double& v : x) v = dist(rng);
    a.add(x);
    for (double& v : x) v = 0.5 + 2.0 * dist(rng);
    b.add(x);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::frechet_distance(a, b));
}
BENCHMARK(BM_FrechetDistance)->Arg(16)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

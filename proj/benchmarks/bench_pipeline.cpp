#include <random>

#include <benchmark/benchmark.h>

#include "cartooner/colorspace.hpp"
#include "cartooner/inference.hpp"
#include "cartooner/network.hpp"

namespace {

using namespace cartooner;

Image smooth_image(int h, int w) {
  Image img(h, w, ColorSpace::RGB);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<double>(x) / w;
      img.at(y, x, 1) = static_cast<double>(y) / h;
      img.at(y, x, 2) = 0.5;
    }
  }
  return img;
}

void BM_GeneratorForward(benchmark::State& state) {
  const nn::Cartooner model(nn::ModelConfig::desk());
  const nn::Tensor lab = color::to_net(color::rgb_to_lab(smooth_image(64, 64)));
  const double alpha = static_cast<double>(state.range(0)) / 2.0;
  nn::NoGradGuard guard;
  for (auto _ : state) {
    const nn::Var f = model.encode(nn::Var::constant(lab));
    benchmark::DoNotOptimize(model.decode_texture(f, {alpha, alpha}).value().data());
    benchmark::DoNotOptimize(model.decode_color(f, lab).value().data());
  }
}
// alpha 2 (one branch per unit) and 2.5 (two branches per unit)
BENCHMARK(BM_GeneratorForward)->Arg(4)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_Cartoonize(benchmark::State& state) {
  const nn::Cartooner model(nn::ModelConfig::desk());
  infer::ControlRequest req;
  req.photo = smooth_image(64, 64);
  req.levels = {2.5, 3.0};
  for (auto _ : state) benchmark::DoNotOptimize(infer::cartoonize(model, req).data.data());
}
BENCHMARK(BM_Cartoonize)->Unit(benchmark::kMillisecond);

void BM_CartoonizeSpatial(benchmark::State& state) {
  const nn::Cartooner model(nn::ModelConfig::desk());
  infer::ControlRequest req;
  req.photo = smooth_image(64, 64);
  RegionMask left(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 32; ++x) left.at(y, x) = 1.0;
  }
  req.regions.push_back({left, {4.0, 4.0}});
  for (auto _ : state) benchmark::DoNotOptimize(infer::cartoonize(model, req).data.data());
}
BENCHMARK(BM_CartoonizeSpatial)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

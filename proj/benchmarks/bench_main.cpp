#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "yoho/config.hpp"
#include "yoho/eunet.hpp"
#include "yoho/layers.hpp"
#include "yoho/losses.hpp"
#include "yoho/metrics.hpp"
#include "yoho/render.hpp"

namespace {

using namespace yoho;

nn::Tensor random_tensor(int c, int n, int h, int w, std::uint64_t seed) {
  nn::Tensor t(c, n, h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (float& v : t.span()) v = d(rng);
  return t;
}

anno::AnnotatedImage synthetic_annotation(int size) {
  anno::AnnotatedImage a;
  a.image = Image(size, size, CV_8UC3);
  cv::randu(a.image, cv::Scalar::all(0), cv::Scalar::all(255));
  const double s = size;
  a.rois = {{{{0.2 * s, 0.2 * s}, {0.8 * s, 0.2 * s}, {0.8 * s, 0.8 * s}, {0.2 * s, 0.8 * s}}}};
  a.samples = {{0.35 * s, 0.35 * s, 0.08 * s}, {0.65 * s, 0.35 * s, 0.08 * s}, {0.5 * s, 0.65 * s, 0.08 * s}};
  a.image_id = "bench";
  return a;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  nn::Conv2d conv(ch, ch, 3, 1, 1, false);
  nn::Rng rng(1);
  conv.init(rng);
  const nn::Tensor x = random_tensor(ch, 4, hw, hw, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_Conv3x3Forward)->Args({16, 64})->Args({64, 32})->Args({128, 16})->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  nn::Conv2d conv(ch, ch, 3, 1, 1, false);
  nn::Rng rng(1);
  conv.init(rng);
  const nn::Tensor x = random_tensor(ch, 4, hw, hw, 2);
  const nn::Tensor y = conv.forward(x);
  const nn::Tensor dy = random_tensor(ch, 4, hw, hw, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(dy));
}
BENCHMARK(BM_Conv3x3Backward)->Args({16, 64})->Args({64, 32})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const RunConfig cfg = profile_config(state.range(0) == 64 ? "smoke" : "phantom");
  const int hw = static_cast<int>(state.range(0));
  const int batch = static_cast<int>(state.range(1));
  nn::EUNet net(cfg.net);
  nn::Rng rng(1);
  net.init(rng);
  const nn::Tensor x = random_tensor(3, batch, hw, hw, 4);
  nn::Tensor s(1, batch, hw, hw), e(1, batch, hw, hw);
  for (int y = hw / 4; y < 3 * hw / 4; ++y)
    for (int b = 0; b < batch; ++b)
      for (int xx = hw / 4; xx < 3 * hw / 4; ++xx) s.at(0, b, y, xx) = 1.0f;
  for (auto _ : state) {
    net.zero_grad();
    const nn::ModelOutputs out = net.forward(x, true);
    nn::OutputGrads grads;
    benchmark::DoNotOptimize(loss::total_loss(out, s, e, {}, cfg.loss, &grads));
    net.backward(grads);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_TrainStep)->Args({64, 4})->Args({128, 8})->Unit(benchmark::kMillisecond);

void BM_Inference(benchmark::State& state) {
  const RunConfig cfg = profile_config("phantom");
  nn::EUNet net(cfg.net);
  nn::Rng rng(1);
  net.init(rng);
  const nn::Tensor x = random_tensor(3, 1, 128, 128, 5);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, false));
}
BENCHMARK(BM_Inference)->Unit(benchmark::kMillisecond);

void BM_EvaluatePair(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  BinaryMask g(size, size, CV_8UC1, cv::Scalar(0));
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if ((x - size / 2) * (x - size / 2) + (y - size / 2) * (y - size / 2) <= size * size / 16) g.at<std::uint8_t>(y, x) = 1;
  cv::Mat s(size, size, CV_64FC1);
  cv::randu(s, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::evaluate_pair("bench", s, g));
}
BENCHMARK(BM_EvaluatePair)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_RenderDataset(benchmark::State& state) {
  const auto a = synthetic_annotation(256);
  render::RenderConfig cfg;
  cfg.K = static_cast<int>(state.range(0));
  cfg.out_size = {128, 128};
  cfg.seeds_per_sample = 4;
  cfg.seed_scale_lo = 0.75;
  for (auto _ : state) benchmark::DoNotOptimize(render::generate_in_memory(a, cfg));
  state.SetItemsProcessed(state.iterations() * cfg.K);
}
BENCHMARK(BM_RenderDataset)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

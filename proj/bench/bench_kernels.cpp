// Serial reference kernels against their parallel counterparts.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "evidseg/cnn.hpp"
#include "evidseg/kernels.hpp"
#include "evidseg/slic.hpp"
#include "evidseg/synthetic.hpp"

using namespace evidseg;

namespace {

Image scene(int height, int width) {
  SyntheticSpec spec;
  spec.height = height;
  spec.width = width;
  spec.regions = 12;
  return synthetic_scene(spec, 0).first;
}

struct AssignFixture {
  kernels::LabImage lab;
  std::vector<ClusterCenter> centers;
  std::vector<int> labels;
  double radius = 0.0;
  double weight = 0.0;

  explicit AssignFixture(int side_px) {
    lab = kernels::to_lab(scene(240, 320));
    const int step = side_px;
    for (int y = step / 2; y < lab.height; y += step)
      for (int x = step / 2; x < lab.width; x += step) {
        const LabColor& c = lab.pixels[static_cast<std::size_t>(y) * lab.width + x];
        centers.push_back({c.l, c.a, c.b, double(x), double(y)});
      }
    labels.assign(lab.pixels.size(), 0);
    radius = step;
    weight = 10.0 / step;
  }
};

template <bool Parallel>
void BM_SlicAssign(benchmark::State& state) {
  AssignFixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::slic_assign_parallel(f.lab, f.centers, f.radius, f.weight, f.labels);
    else
      kernels::slic_assign_serial(f.lab, f.centers, f.radius, f.weight, f.labels);
    benchmark::DoNotOptimize(f.labels.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.labels.size()));
}
BENCHMARK(BM_SlicAssign<false>)->Name("slic_assign/serial")->Arg(10)->Arg(20);
BENCHMARK(BM_SlicAssign<true>)->Name("slic_assign/parallel")->Arg(10)->Arg(20);

template <SlicBackend Backend>
void BM_SlicSegment(benchmark::State& state) {
  const Image image = scene(240, 320);
  SlicParams params;
  for (auto _ : state) benchmark::DoNotOptimize(slic_segment(image, params, Backend).k());
}
BENCHMARK(BM_SlicSegment<SlicBackend::Serial>)->Name("slic_segment/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SlicSegment<SlicBackend::Parallel>)->Name("slic_segment/parallel")->Unit(benchmark::kMillisecond);

struct ConvFixture {
  kernels::ConvShape shape;
  std::vector<double> input, weights, bias, output;

  ConvFixture(int channels, int side, int filters, int kernel) : shape{channels, side, side, filters, kernel} {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    input.resize(static_cast<std::size_t>(channels) * side * side);
    weights.resize(static_cast<std::size_t>(filters) * channels * kernel * kernel);
    bias.resize(filters);
    for (double& v : input) v = u(rng);
    for (double& v : weights) v = u(rng);
    for (double& v : bias) v = u(rng);
    output.resize(static_cast<std::size_t>(filters) * shape.out_height() * shape.out_width());
  }
};

template <bool Gemm>
void BM_Conv(benchmark::State& state) {
  // First layer of the largest default network, then its second conv.
  ConvFixture f = state.range(0) == 0 ? ConvFixture(3, 48, 32, 5) : ConvFixture(32, 22, 64, 3);
  for (auto _ : state) {
    if constexpr (Gemm)
      kernels::conv2d_forward(f.shape, f.input, f.weights, f.bias, f.output);
    else
      kernels::conv2d_forward_reference(f.shape, f.input, f.weights, f.bias, f.output);
    benchmark::DoNotOptimize(f.output.data());
  }
}
BENCHMARK(BM_Conv<false>)->Name("conv2d/reference")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Conv<true>)->Name("conv2d/gemm")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

template <cnn::Execution Mode>
void BM_Predict(benchmark::State& state) {
  const auto arch = cnn::parse_arch("32C5-2P-64C3-2P-FC256", 24);
  cnn::Network net(arch, cnn::Activation::Relu, 1);
  net.set_normalization({0.5, 0.5, 0.5});
  PatchBatch batch;
  batch.side = 24;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int i = 0; i < 64; ++i) {
    Patch p{24, std::vector<float>(24 * 24 * 3), i, NeighborLevel(0)};
    for (float& v : p.data) v = u(rng);
    batch.append(p, PatchRecord{0, i, 0});
  }
  for (auto _ : state) benchmark::DoNotOptimize(cnn::predict_scores(net, batch, Mode).size());
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Predict<cnn::Execution::Serial>)->Name("predict_0N/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Predict<cnn::Execution::Parallel>)->Name("predict_0N/parallel")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

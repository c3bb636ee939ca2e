#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dcnet/decoupled.hpp"
#include "dcnet/loss.hpp"
#include "dcnet/network.hpp"

namespace {

using namespace dcnet;

Tensor<float> noise(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.f, 1.f);
  Tensor<float> t(shape);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

OperatorSpec spec_for(int which) {
  static const MagnitudeKind kinds[] = {MagnitudeKind::Sphere, MagnitudeKind::Ball,
                                        MagnitudeKind::Tanh, MagnitudeKind::Linear};
  OperatorSpec s;
  s.magnitude = MagnitudeSpec::defaults(kinds[which]);
  s.angular.kind = AngularKind::Cosine;
  return s;
}

// args: batch, channels in/out, spatial size
void BM_Im2col(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  auto in = noise({b, c, 28, 28}, 1);
  KernelGeometry g{3, 3, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(im2col(in, g));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(in.size()));
}
BENCHMARK(BM_Im2col)->Args({64, 1})->Args({64, 32});

void BM_DecoupledForward(benchmark::State& state) {
  const auto spec = spec_for(static_cast<int>(state.range(0)));
  auto layer = DecoupledConvLayer<float>::create("b", spec, KernelGeometry{3, 3, 1, 1}, 32, 32);
  layer.weights = noise(layer.weights.shape(), 2);
  auto in = noise({64, 32, 14, 14}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(decoupled_forward(layer, in, true).output);
  state.SetLabel(spec.describe());
}
BENCHMARK(BM_DecoupledForward)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_DecoupledBackward(benchmark::State& state) {
  const auto spec = spec_for(static_cast<int>(state.range(0)));
  auto layer = DecoupledConvLayer<float>::create("b", spec, KernelGeometry{3, 3, 1, 1}, 32, 32);
  layer.weights = noise(layer.weights.shape(), 2);
  auto fwd = decoupled_forward(layer, noise({64, 32, 14, 14}, 3), true);
  auto g = noise(fwd.output.shape(), 4);
  for (auto _ : state) benchmark::DoNotOptimize(decoupled_backward(layer, fwd.cache, g));
  state.SetLabel(spec.describe());
}
BENCHMARK(BM_DecoupledBackward)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_StandardConvForward(benchmark::State& state) {
  StandardConv<float> conv("b", KernelGeometry{3, 3, 1, 1}, 32, 32);
  auto in = noise({64, 32, 14, 14}, 3);
  LayerCache cache;
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(in, Mode::Train, cache));
}
BENCHMARK(BM_StandardConvForward)->Unit(benchmark::kMillisecond);

// one forward + backward of mnist-cnn6 at batch 64; arg 1 = decoupled
void BM_TrainStep(benchmark::State& state) {
  ArchitectureDescription a;
  a.decoupled = state.range(0) != 0;
  a.op = spec_for(2);
  a.batch_norm = false;
  auto net = build_network<float>(a, 5);
  auto x = noise({64, 1, 28, 28}, 6);
  std::vector<int> y(64);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 10);
  for (auto _ : state) {
    auto pass = net.forward(x, Mode::Train);
    auto loss = softmax_xent(pass.logits, std::span<const int>(y));
    net.zero_grad();
    benchmark::DoNotOptimize(net.backward(pass, loss.grad_logits));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

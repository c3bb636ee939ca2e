#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "dcnet/decoupled.hpp"
#include "oracles.hpp"

namespace dcnet {
namespace {

using testing::numeric_gradient;
using testing::random_tensor;
using testing::rel_diff;

constexpr double kPi = std::numbers::pi;

KernelGeometry window(std::size_t k, std::size_t stride, std::size_t pad) {
  KernelGeometry g;
  g.kernel_h = g.kernel_w = k;
  g.stride = stride;
  g.padding = pad;
  return g;
}

OperatorSpec make_spec(MagnitudeKind m, AngularKind a, WeightingMode w = WeightingMode::Unweighted) {
  OperatorSpec s;
  s.magnitude = MagnitudeSpec::defaults(m);
  s.angular.kind = a;
  s.weighting = w;
  return s;
}

DecoupledConvLayer<double> make_layer(const OperatorSpec& spec, std::size_t in_ch, std::size_t K,
                                      const KernelGeometry& geom, std::mt19937_64& rng) {
  auto layer = DecoupledConvLayer<double>::create("probe", spec, geom, in_ch, K);
  layer.weights = random_tensor<double>(layer.weights.shape(), rng);
  layer.rho = random_tensor<double>({K}, rng, 0.5, 2.0);
  return layer;
}

// Direct formulas, written out once more for comparison.
double h_oracle(const MagnitudeSpec& m, double x, double r) {
  const double a = m.alpha, b = m.beta;
  switch (m.kind) {
    case MagnitudeKind::Sphere: return a;
    case MagnitudeKind::Ball: return a * std::min(x, r) / r;
    case MagnitudeKind::Tanh: return a * std::tanh(x / r);
    case MagnitudeKind::Linear: return a * x;
    case MagnitudeKind::Segmented: return x <= r ? a * x : a * r + b * (x - r);
    case MagnitudeKind::Log: return a * std::log(1 + x);
    case MagnitudeKind::Mix: return a * x + b * std::log(1 + x);
  }
  return 0;
}

double g_oracle(const AngularSpec& s, double c) {
  const double theta = std::acos(c);
  switch (s.kind) {
    case AngularKind::LinearAngle: return 1 - 2 * theta / kPi;
    case AngularKind::Cosine: return c;
    case AngularKind::SquareCosine: return c >= 0 ? c * c : -c * c;
    case AngularKind::Sigmoid: {
      const double k = s.k;
      const double e = std::exp(theta / k - kPi / (2 * k));
      return (1 + std::exp(-kPi / (2 * k))) / (1 - std::exp(-kPi / (2 * k))) * (1 - e) / (1 + e);
    }
  }
  return 0;
}

Tensor<double> forward_oracle(const DecoupledConvLayer<double>& layer, const Tensor<double>& in,
                              double scale) {
  const auto& g = layer.geometry;
  const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::size_t K = layer.num_kernels();
  const std::size_t oh = (H + 2 * g.padding - g.kernel_h) / g.stride + 1;
  const std::size_t ow = (W + 2 * g.padding - g.kernel_w) / g.stride + 1;
  Tensor<double> out({B, K, oh, ow});
  std::vector<double> patch(layer.patch_dim());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t d = 0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < g.kernel_h; ++i)
            for (std::size_t j = 0; j < g.kernel_w; ++j) {
              const long iy = static_cast<long>(y * g.stride + i) - static_cast<long>(g.padding);
              const long ix = static_cast<long>(x * g.stride + j) - static_cast<long>(g.padding);
              const bool in_range =
                  iy >= 0 && ix >= 0 && iy < static_cast<long>(H) && ix < static_cast<long>(W);
              patch[d++] = in_range ? in(b, c, static_cast<std::size_t>(iy),
                                         static_cast<std::size_t>(ix))
                                    : 0.0;
            }
        double xn = 0;
        for (double v : patch) xn += v * v;
        xn = std::sqrt(xn);
        for (std::size_t k = 0; k < K; ++k) {
          double wn = 0, ip = 0;
          for (std::size_t q = 0; q < patch.size(); ++q) {
            wn += layer.weights(k, q) * layer.weights(k, q);
            ip += layer.weights(k, q) * patch[q];
          }
          wn = std::sqrt(wn);
          const double c = xn == 0 ? 0.0 : std::clamp(ip / (xn * wn), -1.0, 1.0);
          const double r = layer.rho[k];
          const double re = r * scale;
          const auto& m = layer.spec.magnitude;
          double h = 0;
          switch (layer.spec.weighting) {
            case WeightingMode::Unweighted: h = h_oracle(m, xn, re); break;
            case WeightingMode::LinearWeighted: h = wn * h_oracle(m, xn, re); break;
            case WeightingMode::NonlinearCoupled: h = m.alpha * std::tanh(xn * wn / re); break;
            case WeightingMode::NonlinearSeparate:
              h = m.alpha * std::tanh(wn / r) * std::tanh(xn / re);
              break;
          }
          out(b, k, y, x) = h * g_oracle(layer.spec.angular, c);
        }
      }
  return out;
}

std::vector<OperatorSpec> all_specs() {
  std::vector<OperatorSpec> specs;
  for (auto m : kAllMagnitudeKinds)
    for (auto a : kAllAngularKinds) {
      specs.push_back(make_spec(m, a));
      specs.push_back(make_spec(m, a, WeightingMode::LinearWeighted));
      if (m == MagnitudeKind::Tanh) {
        specs.push_back(make_spec(m, a, WeightingMode::NonlinearCoupled));
        specs.push_back(make_spec(m, a, WeightingMode::NonlinearSeparate));
      }
    }
  return specs;
}

TEST(DecoupledForward, MatchesDirectFormula) {
  std::mt19937_64 rng(21);
  for (const auto& spec : all_specs()) {
    auto layer = make_layer(spec, 2, 3, window(3, 2, 1), rng);
    layer.norm_ma = 1.7;
    auto in = random_tensor<double>({2, 2, 6, 5}, rng);
    auto out = decoupled_forward(layer, in, false).output;
    auto want = forward_oracle(layer, in, 1.7);
    ASSERT_EQ(out.shape(), want.shape());
    EXPECT_LT(rel_diff(testing::as_vector(out), testing::as_vector(want)), 1e-10)
        << spec.describe();
  }
}

TEST(DecoupledForward, LinearWeightedLinearCosineIsConvolution) {
  std::mt19937_64 rng(22);
  auto spec = make_spec(MagnitudeKind::Linear, AngularKind::Cosine, WeightingMode::LinearWeighted);
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, {3, 2, 0}, {1, 1, 0}}) {
    auto layer = make_layer(spec, 3, 4, window(k, s, p), rng);
    auto in = random_tensor<double>({2, 3, 7, 7}, rng, -3, 3);
    auto out = decoupled_forward(layer, in, true).output;
    auto ref = testing::naive_conv(in, layer.weights, k, k, s, p);
    EXPECT_LT(max_abs_diff(out, ref), 1e-6);
  }
}

TEST(DecoupledForward, BoundedMagnitudesStayBounded) {
  std::mt19937_64 rng(23);
  for (auto m : {MagnitudeKind::Sphere, MagnitudeKind::Ball, MagnitudeKind::Tanh}) {
    auto spec = make_spec(m, AngularKind::Cosine);
    spec.magnitude.alpha = 2.5;
    auto layer = make_layer(spec, 1, 4, window(3, 1, 0), rng);
    for (double mul : {1.0, 1e3, 1e6}) {
      auto in = scaled(random_tensor<double>({2, 1, 6, 6}, rng), mul);
      auto out = decoupled_forward(layer, in, false).output;
      ASSERT_TRUE(out.all_finite());
      for (double v : out.values()) EXPECT_LE(std::abs(v), 2.5 + 1e-12);
    }
  }
}

TEST(DecoupledForward, UnweightedIgnoresKernelScale) {
  std::mt19937_64 rng(24);
  for (auto m : kAllMagnitudeKinds)
    for (auto a : kAllAngularKinds) {
      auto layer = make_layer(make_spec(m, a), 2, 3, window(3, 1, 1), rng);
      auto in = random_tensor<double>({1, 2, 5, 5}, rng);
      auto base = decoupled_forward(layer, in, false).output;
      for (double c : {1e-2, 7.0, 1e3}) {
        auto scaled_layer = layer;
        scaled_layer.weights = scaled(layer.weights, c);
        auto out = decoupled_forward(scaled_layer, in, false).output;
        EXPECT_LT(max_abs_diff(out, base), 1e-9) << to_string(m) << "+" << to_string(a);
      }
    }
}

TEST(DecoupledForward, ZeroPatchGivesZeroAngle) {
  std::mt19937_64 rng(25);
  auto layer = make_layer(make_spec(MagnitudeKind::Sphere, AngularKind::Cosine), 1, 2,
                          window(3, 1, 0), rng);
  auto r = decoupled_forward(layer, Tensor<double>({1, 1, 3, 3}), false);
  EXPECT_EQ(r.output[0], 0.0);
  EXPECT_EQ(r.output[1], 0.0);
  auto g = decoupled_backward(layer, r.cache, Tensor<double>(r.output.shape(), 1.0));
  EXPECT_TRUE(g.grad_input.all_finite());
  EXPECT_TRUE(g.grad_weights.all_finite());
}

TEST(DecoupledForward, ChannelMismatch) {
  std::mt19937_64 rng(26);
  auto layer = make_layer(make_spec(MagnitudeKind::Tanh, AngularKind::Cosine), 2, 2,
                          window(3, 1, 0), rng);
  EXPECT_THROW(decoupled_forward(layer, Tensor<double>({1, 3, 5, 5}), false), DimensionError);
}

TEST(NormAverage, InitialisedThenSmoothed) {
  std::mt19937_64 rng(27);
  auto layer = make_layer(make_spec(MagnitudeKind::Tanh, AngularKind::Cosine), 1, 2,
                          window(3, 1, 0), rng);
  EXPECT_EQ(layer.norm_ma, 0.0);
  EXPECT_EQ(layer.norm_scale(), 1.0);
  auto batch_mean = [&](const Tensor<double>& in) {
    auto r = decoupled_forward(layer, in, false);
    double s = 0;
    for (double v : r.cache.angles.x_norm.values()) s += v;
    return s / static_cast<double>(r.cache.angles.x_norm.size());
  };
  auto a = random_tensor<double>({2, 1, 5, 5}, rng);
  auto b = random_tensor<double>({2, 1, 5, 5}, rng, 0, 4);
  const double ma = batch_mean(a), mb = batch_mean(b);
  EXPECT_EQ(layer.norm_ma, 0.0);

  auto first = decoupled_forward(layer, a, true);
  EXPECT_NEAR(layer.norm_ma, ma, 1e-12);
  EXPECT_NEAR(first.cache.norm_scale, ma, 1e-12);
  decoupled_forward(layer, b, true);
  EXPECT_NEAR(layer.norm_ma, 0.99 * ma + 0.01 * mb, 1e-12);
  const double held = layer.norm_ma;
  auto eval = decoupled_forward(layer, b, false);
  EXPECT_EQ(layer.norm_ma, held);
  EXPECT_LT(max_abs_diff(eval.output, forward_oracle(layer, b, held)), 1e-12);
}

TEST(RhoClamp, FloorsAtMinimum) {
  std::mt19937_64 rng(28);
  auto layer = make_layer(make_spec(MagnitudeKind::Ball, AngularKind::Cosine), 1, 3,
                          window(3, 1, 0), rng);
  layer.rho = Tensor<double>({3}, {-1.0, 0.0, 0.5});
  layer.clamp_rho();
  EXPECT_EQ(layer.rho[0], 1e-3);
  EXPECT_EQ(layer.rho[1], 1e-3);
  EXPECT_EQ(layer.rho[2], 0.5);
}

TEST(DecoupledBackward, WithoutForwardIsUsageError) {
  std::mt19937_64 rng(29);
  auto layer = make_layer(make_spec(MagnitudeKind::Tanh, AngularKind::Cosine), 1, 2,
                          window(3, 1, 0), rng);
  EXPECT_THROW(decoupled_backward(layer, DecoupledCache<double>{}, Tensor<double>({1, 2, 1, 1})),
               UsageError);
}

TEST(DecoupledBackward, SphereCosineWeightGradient) {
  std::mt19937_64 rng(30);
  auto spec = make_spec(MagnitudeKind::Sphere, AngularKind::Cosine);
  spec.magnitude.alpha = 1.0;
  auto layer = make_layer(spec, 2, 1, window(3, 1, 0), rng);
  auto in = random_tensor<double>({1, 2, 3, 3}, rng);
  auto r = decoupled_forward(layer, in, false);
  auto g = decoupled_backward(layer, r.cache, Tensor<double>({1, 1, 1, 1}, 1.0));
  const double wn = l2_norm(layer.weights), xn = l2_norm(in);
  double c = 0;
  for (std::size_t i = 0; i < 18; ++i) c += layer.weights[i] * in[i] / (wn * xn);
  for (std::size_t i = 0; i < 18; ++i) {
    const double want = (in[i] / xn - c * layer.weights[i] / wn) / wn;
    EXPECT_NEAR(g.grad_weights[i], want, 1e-12);
  }

  layer.weights = scaled(in.reshaped({1, 18}), 2.0);
  r = decoupled_forward(layer, in, false);
  g = decoupled_backward(layer, r.cache, Tensor<double>({1, 1, 1, 1}, 1.0));
  for (double v : g.grad_weights.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(DecoupledBackward, GradRhoPresence) {
  std::mt19937_64 rng(31);
  auto check = [&](OperatorSpec spec, bool expect_rho) {
    auto layer = make_layer(spec, 1, 2, window(3, 1, 0), rng);
    auto in = random_tensor<double>({1, 1, 4, 4}, rng);
    auto r = decoupled_forward(layer, in, true);
    Tensor<double> go(r.output.shape(), 1.0);
    auto g = decoupled_backward(layer, r.cache, go);
    EXPECT_EQ(g.grad_rho.has_value(), expect_rho) << spec.describe();
    auto only_input = decoupled_backward(layer, r.cache, go, GradRequest{true, false});
    EXPECT_TRUE(only_input.grad_weights.empty());
    EXPECT_FALSE(only_input.grad_rho.has_value());
    EXPECT_FALSE(only_input.grad_input.empty());
    auto only_params = decoupled_backward(layer, r.cache, go, GradRequest{false, true});
    EXPECT_TRUE(only_params.grad_input.empty());
    EXPECT_LT(max_abs_diff(only_params.grad_weights, g.grad_weights), 1e-15);
  };
  check(make_spec(MagnitudeKind::Sphere, AngularKind::Cosine), false);
  auto fixed = make_spec(MagnitudeKind::Tanh, AngularKind::Cosine);
  fixed.magnitude.rho_learnable = false;
  check(fixed, false);
  check(make_spec(MagnitudeKind::Tanh, AngularKind::Cosine), true);
  check(make_spec(MagnitudeKind::Ball, AngularKind::Sigmoid), true);
}

class BackwardDifferenceTest : public ::testing::TestWithParam<std::size_t> {};

TEST_P(BackwardDifferenceTest, MatchesCentralDifferences) {
  const auto spec = all_specs()[GetParam()];
  std::mt19937_64 rng(1000 + GetParam());
  auto layer = make_layer(spec, 2, 3, window(3, 1, 1), rng);
  layer.norm_ma = 1.3;
  auto in = random_tensor<double>({2, 2, 4, 4}, rng);
  auto probe = random_tensor<double>({2, 3, 4, 4}, rng);
  auto loss = [&] { return dot(decoupled_forward(layer, in, false).output, probe); };

  auto r = decoupled_forward(layer, in, false);
  auto g = decoupled_backward(layer, r.cache, probe);

  EXPECT_LT(rel_diff(testing::as_vector(g.grad_input), numeric_gradient(loss, in, 1e-6)), 1e-5)
      << spec.describe();
  EXPECT_LT(rel_diff(testing::as_vector(g.grad_weights), numeric_gradient(loss, layer.weights, 1e-6)),
            1e-5)
      << spec.describe();
  if (spec.rho_trainable()) {
    ASSERT_TRUE(g.grad_rho.has_value());
    EXPECT_LT(rel_diff(testing::as_vector(*g.grad_rho), numeric_gradient(loss, layer.rho, 1e-6)),
              1e-5)
        << spec.describe();
  }
}

INSTANTIATE_TEST_SUITE_P(AllCombinations, BackwardDifferenceTest,
                         ::testing::Range<std::size_t>(0, all_specs().size()));

TEST(SegmentedReduction, EqualSlopesIsLinear) {
  std::mt19937_64 rng(32);
  auto seg = make_spec(MagnitudeKind::Segmented, AngularKind::Sigmoid);
  seg.magnitude.alpha = seg.magnitude.beta = 1.4;
  auto lin = make_spec(MagnitudeKind::Linear, AngularKind::Sigmoid);
  lin.magnitude.alpha = 1.4;
  auto a = make_layer(seg, 2, 3, window(3, 1, 1), rng);
  auto b = a;
  b.spec = lin;
  auto in = random_tensor<double>({2, 2, 5, 5}, rng, -2, 2);
  EXPECT_LT(max_abs_diff(decoupled_forward(a, in, true).output,
                         decoupled_forward(b, in, true).output),
            1e-12);
}

TEST(SegmentedReduction, FlatSecondSlopeIsBall) {
  std::mt19937_64 rng(33);
  const double r = 0.8;
  auto seg = make_spec(MagnitudeKind::Segmented, AngularKind::Cosine);
  seg.magnitude.alpha = 1.0 / r;
  seg.magnitude.beta = 0.0;
  auto a = make_layer(seg, 2, 3, window(3, 1, 1), rng);
  a.rho.fill(r);
  auto b = a;
  b.spec = make_spec(MagnitudeKind::Ball, AngularKind::Cosine);
  auto in = random_tensor<double>({2, 2, 5, 5}, rng, -0.5, 0.5);
  EXPECT_LT(max_abs_diff(decoupled_forward(a, in, false).output,
                         decoupled_forward(b, in, false).output),
            1e-12);
}

TEST(Precision, FloatTracksDouble) {
  std::mt19937_64 rng(34);
  for (auto spec : {make_spec(MagnitudeKind::Tanh, AngularKind::Cosine),
                    make_spec(MagnitudeKind::Ball, AngularKind::Sigmoid),
                    make_spec(MagnitudeKind::Mix, AngularKind::SquareCosine)}) {
    auto ld = make_layer(spec, 2, 4, window(3, 1, 1), rng);
    auto lf = DecoupledConvLayer<float>::create("f", spec, ld.geometry, 2, 4);
    lf.weights = ld.weights.cast<float>();
    lf.rho = ld.rho.cast<float>();
    auto in = random_tensor<double>({2, 2, 6, 6}, rng);
    auto od = decoupled_forward(ld, in, true);
    auto of = decoupled_forward(lf, in.cast<float>(), true);
    EXPECT_LT(max_abs_diff(of.output.cast<double>(), od.output), 1e-4);
    auto go = random_tensor<double>(od.output.shape(), rng);
    auto gd = decoupled_backward(ld, od.cache, go);
    auto gf = decoupled_backward(lf, of.cache, go.cast<float>());
    EXPECT_LT(rel_diff(testing::as_vector(gf.grad_weights.cast<double>()),
                       testing::as_vector(gd.grad_weights)),
              1e-4);
  }
}

}  // namespace
}  // namespace dcnet

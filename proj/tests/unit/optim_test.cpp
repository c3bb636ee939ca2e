#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dcnet/optim.hpp"
#include "oracles.hpp"

namespace dcnet {
namespace {

using testing::random_tensor;

struct Param {
  Tensor<double> value, grad;
  ParamRef<double> ref(const std::string& name, ParamRole role) { return {name, &value, &grad, role}; }
};

UpdateRule sgd(double lr, double momentum = 0.9) {
  UpdateRule r;
  r.kind = UpdateKind::SgdMomentum;
  r.momentum = momentum;
  r.schedule = LrSchedule::constant(lr);
  return r;
}

TEST(Adam, MatchesClosedForm) {
  UpdateRule rule;
  rule.schedule = LrSchedule::constant(0.01);
  Optimizer<double> opt(rule);
  Param p{Tensor<double>({2}, {1.0, -2.0}), Tensor<double>({2}, {0.5, -3.0})};
  opt.step({p.ref("w", ParamRole::FcWeight)});
  // Bias-corrected first step moves by lr * g / (|g| + eps).
  EXPECT_NEAR(p.value[0], 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value[1], -2.0 + 0.01 * 3.0 / (3.0 + 1e-8), 1e-15);

  const double g1 = 0.5, g2 = 2.0;
  p.grad[0] = g2;
  const double before = p.value[0];
  opt.step({p.ref("w", ParamRole::FcWeight)});
  const double m = 0.9 * 0.1 * g1 + 0.1 * g2;
  const double v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.value[0], before - 0.01 * mhat / (std::sqrt(vhat) + 1e-8), 1e-14);
  EXPECT_EQ(opt.steps_taken(), 2u);
}

TEST(SgdMomentum, MatchesClosedForm) {
  Optimizer<double> opt(sgd(0.1));
  Param p{Tensor<double>({1}, {1.0}), Tensor<double>({1}, {2.0})};
  opt.step({p.ref("w", ParamRole::Bias)});
  EXPECT_NEAR(p.value[0], 1.0 - 0.2, 1e-15);
  p.grad[0] = -1.0;
  opt.step({p.ref("w", ParamRole::Bias)});
  EXPECT_NEAR(p.value[0], 0.8 - 0.1 * (0.9 * 2.0 - 1.0), 1e-15);
}

TEST(WeightedGradients, ScaleRowsByKernelNorm) {
  Tensor<double> w({2, 2}, {3, 4, 0, 2});
  Tensor<double> g({2, 2}, {1, 1, 1, -1});
  auto out = apply_weighted_gradients(g, w);
  EXPECT_EQ(testing::as_vector(out), (std::vector<double>{5, 5, 2, -2}));
  EXPECT_THROW(apply_weighted_gradients(g, Tensor<double>({3, 2})), DimensionError);
}

TEST(WeightedGradients, StayOrthogonalToKernels) {
  std::mt19937_64 rng(61);
  for (auto m : {MagnitudeKind::Sphere, MagnitudeKind::Tanh, MagnitudeKind::Ball}) {
    OperatorSpec spec;
    spec.magnitude = MagnitudeSpec::defaults(m);
    auto layer = DecoupledConvLayer<double>::create("p", spec, {3, 3, 1, 1}, 2, 4);
    layer.weights = random_tensor<double>(layer.weights.shape(), rng);
    auto in = random_tensor<double>({2, 2, 5, 5}, rng);
    auto fw = decoupled_forward(layer, in, true);
    auto g = decoupled_backward(layer, fw.cache, random_tensor<double>(fw.output.shape(), rng));
    auto wg = apply_weighted_gradients(g.grad_weights, layer.weights);
    for (std::size_t k = 0; k < 4; ++k) {
      double ip = 0, gn = 0;
      for (std::size_t d = 0; d < 18; ++d) {
        ip += wg(k, d) * layer.weights(k, d);
        gn += wg(k, d) * wg(k, d);
      }
      double wn = 0;
      for (std::size_t d = 0; d < 18; ++d) wn += layer.weights(k, d) * layer.weights(k, d);
      EXPECT_LT(std::abs(ip), 1e-10 * std::max(1.0, std::sqrt(gn * wn))) << to_string(m);
    }
  }
}

TEST(Projection, RowsGetNormS) {
  Tensor<double> w({2, 2}, {3, 4, 0, -0.5});
  auto p = project_weights(w, 2.0);
  EXPECT_NEAR(p(0, 0), 1.2, 1e-15);
  EXPECT_NEAR(p(0, 1), 1.6, 1e-15);
  EXPECT_NEAR(p(1, 1), -2.0, 1e-15);
  EXPECT_EQ(p(1, 0), 0.0);
}

TEST(Projection, Idempotent) {
  std::mt19937_64 rng(62);
  auto w = random_tensor<double>({7, 9}, rng, -5, 5);
  auto once = project_weights(w, 1.5);
  auto twice = project_weights(once, 1.5);
  EXPECT_LT(max_abs_diff(once, twice), 1e-14);
  auto n = row_norms(once);
  for (double v : n.values()) EXPECT_NEAR(v, 1.5, 1e-14);
}

TEST(Optimizer, NonFiniteGradientLeavesParameters) {
  Optimizer<double> opt(sgd(0.1));
  Param a{Tensor<double>({2}, {1, 2}), Tensor<double>({2}, {1, 1})};
  Param b{Tensor<double>({1}, {3}), Tensor<double>({1}, {std::nan("")})};
  const auto keep_a = a.value;
  EXPECT_THROW(opt.step({a.ref("a", ParamRole::FcWeight), b.ref("b", ParamRole::Bias)}),
               NumericError);
  EXPECT_EQ(a.value, keep_a);
  EXPECT_EQ(b.value[0], 3.0);
  EXPECT_EQ(opt.steps_taken(), 0u);
  b.grad[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(opt.step({b.ref("b", ParamRole::Bias)}), NumericError);
}

TEST(Optimizer, RadiusClampedAfterUpdate) {
  Optimizer<double> opt(sgd(1.0, 0.0));
  Param r{Tensor<double>({2}, {0.5, 2.0}), Tensor<double>({2}, {10.0, 0.5})};
  opt.step({r.ref("rho", ParamRole::Radius)});
  EXPECT_EQ(r.value[0], 1e-3);
  EXPECT_DOUBLE_EQ(r.value[1], 1.5);
}

TEST(Optimizer, TransformsOnlyTouchDecoupledKernels) {
  auto rule = sgd(0.1, 0.0);
  rule.gradient_mode = GradientMode::Weighted;
  rule.projection = ProjectionSpec{1, 1.0};
  Optimizer<double> opt(rule);
  Param k{Tensor<double>({1, 2}, {3, 4}), Tensor<double>({1, 2}, {0.4, -0.3})};
  Param f{Tensor<double>({1, 2}, {3, 4}), Tensor<double>({1, 2}, {0.4, -0.3})};
  Param wk{Tensor<double>({1, 2}, {3, 4}), Tensor<double>({1, 2}, {0.4, -0.3})};
  opt.step({k.ref("k", ParamRole::DecoupledKernel), f.ref("f", ParamRole::FcWeight),
            wk.ref("wk", ParamRole::WeightedDecoupledKernel)});
  // kernel: w - 0.1 * 5 * g = (2.8, 4.15), then normalised
  const double n = std::hypot(2.8, 4.15);
  EXPECT_NEAR(k.value[0], 2.8 / n, 1e-14);
  EXPECT_NEAR(k.value[1], 4.15 / n, 1e-14);
  EXPECT_NEAR(f.value[0], 2.96, 1e-14);
  EXPECT_NEAR(wk.value[1], 4.03, 1e-14);
}

TEST(Optimizer, ProjectionInterval) {
  auto rule = sgd(0.1, 0.0);
  rule.projection = ProjectionSpec{3, 1.0};
  Optimizer<double> opt(rule);
  Param k{Tensor<double>({1, 1}, {1.0}), Tensor<double>({1, 1}, {-1.0})};
  opt.step({k.ref("k", ParamRole::DecoupledKernel)});
  EXPECT_NEAR(k.value[0], 1.1, 1e-15);
  opt.step({k.ref("k", ParamRole::DecoupledKernel)});
  EXPECT_NEAR(k.value[0], 1.2, 1e-15);
  opt.step({k.ref("k", ParamRole::DecoupledKernel)});
  EXPECT_NEAR(k.value[0], 1.0, 1e-15);
}

TEST(LrSchedule, StepDecay) {
  auto s = LrSchedule::step_decay(0.1, 100);
  EXPECT_EQ(s.at(0), 0.1);
  EXPECT_EQ(s.at(49), 0.1);
  EXPECT_NEAR(s.at(50), 0.01, 1e-15);
  EXPECT_NEAR(s.at(74), 0.01, 1e-15);
  EXPECT_NEAR(s.at(75), 0.001, 1e-15);
  EXPECT_NEAR(s.at(10000), 0.001, 1e-15);
  EXPECT_THROW(LrSchedule::step_decay(0.1, 100, {1.5}), ConfigError);
  LrSchedule bad{{{1, 0.1}}};
  EXPECT_THROW(bad.validate(), ConfigError);
  LrSchedule negative{{{0, -0.1}}};
  EXPECT_THROW(negative.validate(), ConfigError);
}

TEST(Optimizer, CurrentLrFollowsSchedule) {
  UpdateRule rule = sgd(1.0);
  rule.schedule = LrSchedule{{{0, 1.0}, {2, 0.5}}};
  Optimizer<double> opt(rule);
  Param p{Tensor<double>({1}), Tensor<double>({1})};
  EXPECT_EQ(opt.current_lr(), 1.0);
  opt.step({p.ref("p", ParamRole::Bias)});
  opt.step({p.ref("p", ParamRole::Bias)});
  EXPECT_EQ(opt.current_lr(), 0.5);
}

TEST(UpdateNames, RoundTrip) {
  for (auto k : {UpdateKind::Adam, UpdateKind::SgdMomentum})
    EXPECT_EQ(parse_update_kind(to_string(k)), k);
  for (auto m : {GradientMode::Standard, GradientMode::Weighted})
    EXPECT_EQ(parse_gradient_mode(to_string(m)), m);
  EXPECT_THROW(parse_update_kind("rmsprop"), ConfigError);
}

// With projection on, training from W and from cW must follow the same path.
TEST(Optimizer, ProjectedTrajectoryIgnoresKernelScale) {
  ArchitectureDescription a;
  a.preset = "custom";
  a.custom_layers = {"conv3:4", "pool", "conv3:4", "fc:8"};
  a.height = a.width = 8;
  a.num_classes = 3;
  a.op.magnitude = MagnitudeSpec::defaults(MagnitudeKind::Tanh);
  UpdateRule rule;
  rule.schedule = LrSchedule::constant(1e-2);
  rule.projection = ProjectionSpec{1, 1.0};

  std::mt19937_64 rng(63);
  auto x = random_tensor<double>({4, 1, 8, 8}, rng);
  std::vector<int> labels{0, 1, 2, 1};

  auto run = [&](double c) {
    auto net = build_network<double>(a, 5);
    for (auto* d : decoupled_layers(net)) d->op().weights = scaled(d->op().weights, c);
    Optimizer<double> opt(rule);
    opt.initialize(net);
    for (int step = 0; step < 10; ++step) {
      auto pass = net.forward(x, Mode::Train);
      auto l = softmax_xent(pass.logits, std::span<const int>(labels));
      net.zero_grad();
      net.backward(pass, l.grad_logits);
      opt.step(net);
    }
    return net;
  };
  auto base = run(1.0);
  for (double c : {0.1, 10.0}) {
    auto other = run(c);
    auto pb = base.params(), po = other.params();
    ASSERT_EQ(pb.size(), po.size());
    for (std::size_t i = 0; i < pb.size(); ++i)
      EXPECT_LT(max_abs_diff(*pb[i].value, *po[i].value), 1e-6) << pb[i].name << " c=" << c;
  }
}

}  // namespace
}  // namespace dcnet

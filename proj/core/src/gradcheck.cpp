#include "dcnet/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "dcnet/decoupled.hpp"
#include "dcnet/errors.hpp"
#include "dcnet/loss.hpp"

namespace dcnet {

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DimensionError("relative_error: size mismatch");
  double diff = 0, a = 0, n = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    a += analytic[i] * analytic[i];
    n += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(a), std::sqrt(n), 1e-8});
}

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

double functional(const Tensor<double>& out, const Tensor<double>& g) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * g[i];
  return s;
}

// Rescales each row to a log-uniform norm in [lo, hi].
void randomize_row_norms(Tensor<double>& m, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  const std::size_t d = m.dim(1);
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    double sq = 0;
    for (std::size_t j = 0; j < d; ++j) sq += m(r, j) * m(r, j);
    const double scale = std::exp(u(rng)) / std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) m(r, j) *= scale;
  }
}

}  // namespace

OperatorPointResult check_operator_point(const OperatorSpec& spec_in, std::mt19937_64& rng,
                                         const OperatorPointOptions& opt) {
  OperatorSpec spec = spec_in;
  spec.magnitude.rho_learnable = spec.magnitude.has_radius();
  spec.validate();

  // A 1x1 kernel over [P, D, 1, 1] input makes each sample one patch row.
  const KernelGeometry geom{1, 1, 1, 0};
  auto layer = DecoupledConvLayer<double>::create("point", spec, geom, opt.patch_dim, opt.kernels);
  Tensor<double> x;
  std::uniform_real_distribution<double> rho_dist(0.5, 2.0);
  std::uniform_real_distribution<double> scale_dist(0.5, 2.0);
  for (int attempt = 0;; ++attempt) {
    if (attempt > 10000) throw NumericError("could not draw a non-degenerate gradcheck point");
    layer.weights = random_tensor({opt.kernels, opt.patch_dim}, rng);
    randomize_row_norms(layer.weights, rng, 0.2, 5.0);
    auto xm = random_tensor({opt.patches, opt.patch_dim}, rng);
    randomize_row_norms(xm, rng, 0.2, 5.0);
    for (auto& r : layer.rho.values()) r = rho_dist(rng);
    layer.norm_ma = scale_dist(rng);

    const auto ang = decompose(xm, layer.weights);
    bool ok = true;
    for (std::size_t p = 0; p < opt.patches && ok; ++p) {
      for (std::size_t k = 0; k < opt.kernels && ok; ++k) {
        const double c = ang.cos_theta[p * opt.kernels + k];
        if (std::abs(c) > opt.max_abs_cos) ok = false;
        const bool kneed = spec.magnitude.kind == MagnitudeKind::Ball ||
                           spec.magnitude.kind == MagnitudeKind::Segmented;
        if (kneed) {
          const double ratio = ang.x_norm[p] / (layer.rho[k] * layer.norm_ma);
          if (std::abs(ratio - 1.0) < opt.knee_band) ok = false;
        }
      }
    }
    if (!ok) continue;
    x = xm.reshaped({opt.patches, opt.patch_dim, 1, 1});
    break;
  }

  auto probe = decoupled_forward(layer, x, false);
  const auto g = random_tensor(probe.output.shape(), rng);
  const auto grads = decoupled_backward(layer, probe.cache, g);

  auto loss = [&] { return functional(decoupled_forward(layer, x, false).output, g); };
  auto numeric = [&](Tensor<double>& t) {
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + opt.step;
      const double up = loss();
      t[i] = saved - opt.step;
      const double down = loss();
      t[i] = saved;
      out[i] = (up - down) / (2 * opt.step);
    }
    return out;
  };
  auto as_vec = [](const Tensor<double>& t) { return std::vector<double>(t.values().begin(), t.values().end()); };

  OperatorPointResult r;
  r.weights = relative_error(as_vec(grads.grad_weights), numeric(layer.weights));
  r.input = relative_error(as_vec(grads.grad_input), numeric(x));
  if (grads.grad_rho) r.rho = relative_error(as_vec(*grads.grad_rho), numeric(layer.rho));
  return r;
}

GradcheckOptions GradcheckOptions::tiny(const OperatorSpec& spec) {
  GradcheckOptions o;
  o.arch.preset = "custom";
  o.arch.custom_layers = {"conv3:4", "pool", "conv3:4"};
  o.arch.in_channels = 2;
  o.arch.height = o.arch.width = 8;
  o.arch.num_classes = 3;
  o.arch.op = spec;
  o.arch.batch_norm = false;
  return o;
}

bool GradcheckReport::passed() const {
  for (const auto& g : groups)
    if (g.checked > 0 && !(g.max_rel_error < threshold)) return false;
  return true;
}

double GradcheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_error);
  return m;
}

std::size_t GradcheckReport::excluded() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.excluded;
  return n;
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  os << "group\tchecked\texcluded\tmax_rel_error\tstatus\n";
  for (const auto& g : groups) {
    os << g.name << '\t' << g.checked << '\t' << g.excluded << '\t' << g.max_rel_error << '\t'
       << (g.checked == 0 ? "skipped" : (g.max_rel_error < threshold ? "ok" : "FAIL")) << '\n';
  }
  os << (passed() ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error()
     << " threshold=" << threshold << " excluded=" << excluded() << '\n';
  return os.str();
}

GradcheckReport gradcheck_network(const GradcheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  auto net = build_network<double>(options.arch, options.seed);
  auto input = random_tensor({options.batch, options.arch.in_channels, options.arch.height,
                              options.arch.width},
                             rng);
  std::vector<int> labels(options.batch);
  for (std::size_t i = 0; i < options.batch; ++i) labels[i] = static_cast<int>(i % options.arch.num_classes);

  // Perturb radii away from their shared initial value so each kernel differs.
  std::uniform_real_distribution<double> rho_dist(0.6, 1.6);
  for (auto* d : decoupled_layers(net)) {
    for (auto& r : d->op().rho.values()) r = rho_dist(rng);
  }
  net.forward(input, Mode::Train);  // initialises moving statistics

  if (options.force_knee) {
    // Put each kneed layer's first kernel exactly on the first patch norm.
    Tensor<double> current = input;
    LayerCache scratch;
    for (std::size_t i = 0; i < net.size(); ++i) {
      if (auto* d = dynamic_cast<DecoupledConv<double>*>(&net.layer(i))) {
        const auto kind = d->op().spec.magnitude.kind;
        if (kind == MagnitudeKind::Ball || kind == MagnitudeKind::Segmented) {
          const auto patches = im2col(current, d->op().geometry);
          const double x0 = row_norms(patches.patches)[0];
          d->op().rho[0] = x0 / d->op().norm_scale();
        }
      }
      current = net.layer(i).forward(current, Mode::Eval, scratch);
    }
  }

  auto loss_at = [&](std::uint64_t* signature) {
    auto pass = net.forward(input, Mode::Eval);
    if (signature) *signature = net.branch_signature(pass);
    return static_cast<double>(softmax_xent(pass.logits, labels).loss);
  };

  net.zero_grad();
  auto pass = net.forward(input, Mode::Eval);
  const auto base_signature = net.branch_signature(pass);
  const auto result = softmax_xent(pass.logits, labels);
  const auto grad_input = net.backward(pass, result.grad_logits, /*input_grad=*/true);

  GradcheckReport report;
  report.threshold = options.threshold;
  auto check_group = [&](const std::string& name, Tensor<double>& value, const Tensor<double>& analytic) {
    GroupReport g;
    g.name = name;
    std::vector<double> a, n;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      std::uint64_t sig_up = 0, sig_down = 0;
      value[i] = saved + options.step;
      const double up = loss_at(&sig_up);
      value[i] = saved - options.step;
      const double down = loss_at(&sig_down);
      value[i] = saved;
      if (sig_up != base_signature || sig_down != base_signature) {
        ++g.excluded;
        continue;
      }
      a.push_back(analytic[i]);
      n.push_back((up - down) / (2 * options.step));
    }
    g.checked = a.size();
    if (!a.empty()) g.max_rel_error = relative_error(a, n);
    report.groups.push_back(std::move(g));
  };

  for (auto& p : net.params()) check_group(p.name, *p.value, *p.grad);
  check_group("input", input, grad_input);
  return report;
}

EquivalenceReport compare_linear_weighted_to_standard(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const KernelGeometry geom{3, 3, 1, 1};
  OperatorSpec spec;
  spec.magnitude = MagnitudeSpec::defaults(MagnitudeKind::Linear);
  spec.angular.kind = AngularKind::Cosine;
  spec.weighting = WeightingMode::LinearWeighted;

  DecoupledConv<double> decoupled(DecoupledConvLayer<double>::create("dc", spec, geom, 3, 5));
  StandardConv<double> standard("sc", geom, 3, 5);
  const auto w = random_tensor({5, 27}, rng);
  decoupled.op().weights = w;
  standard.weights() = w;

  const auto x = random_tensor({2, 3, 6, 6}, rng);
  LayerCache cd, cs;
  const auto yd = decoupled.forward(x, Mode::Train, cd);
  const auto ys = standard.forward(x, Mode::Train, cs);
  const auto g = random_tensor(yd.shape(), rng);
  const auto gxd = decoupled.backward(cd, g, {});
  const auto gxs = standard.backward(cs, g, {});

  auto rel = [](const Tensor<double>& a, const Tensor<double>& b) {
    double scale = 1e-300;
    for (auto v : b.values()) scale = std::max(scale, std::abs(v));
    return max_abs_diff(a, b) / scale;
  };
  EquivalenceReport r;
  r.output = rel(yd, ys);
  r.grad_input = rel(gxd, gxs);
  r.grad_weights = rel(decoupled.grad_weights(), *standard.params()[0].grad);
  return r;
}

}  // namespace dcnet

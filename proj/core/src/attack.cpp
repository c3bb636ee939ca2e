#include "dcnet/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcnet/errors.hpp"
#include "dcnet/loss.hpp"

namespace dcnet {

std::string to_string(AttackMethod method) {
  return method == AttackMethod::Fgsm ? "fgsm" : "bim";
}

AttackMethod parse_attack_method(const std::string& text) {
  if (text == "fgsm") return AttackMethod::Fgsm;
  if (text == "bim") return AttackMethod::Bim;
  throw ConfigError("unknown attack method '" + text + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("[attack] epsilon must be >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("[attack] tau must be positive");
  if (iterations == 0) throw ConfigError("[attack] iterations must be >= 1");
  if (method == AttackMethod::Bim && epsilon < tau) {
    throw ConfigError("[attack] bim requires epsilon >= tau");
  }
  if (!(adv_ratio >= 0.0 && adv_ratio < 1.0)) throw ConfigError("[attack] adv_ratio must lie in [0,1)");
  if (batch_size == 0) throw ConfigError("[attack] batch_size must be >= 1");
}

template <typename T>
Tensor<T> input_gradient(Network<T>& net, const Tensor<T>& images, std::span<const int> labels) {
  auto pass = net.forward(images, Mode::Eval);
  const auto loss = softmax_xent(pass.logits, labels);
  return net.backward(pass, loss.grad_logits, /*input_grad=*/true, /*param_grads=*/false);
}

namespace {

template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <typename T>
T clip01(T v) {
  return std::clamp(v, T(0), T(1));
}

}  // namespace

template <typename T>
Tensor<T> fgsm(Network<T>& net, const Tensor<T>& images, std::span<const int> labels,
               double epsilon) {
  const T eps = static_cast<T>(epsilon / 255.0);
  Tensor<T> out = images;
  if (eps == T(0)) return out;
  const auto grad = input_gradient(net, images, labels);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clip01(images[i] + eps * sign(grad[i]));
  return out;
}

template <typename T>
Tensor<T> bim(Network<T>& net, const Tensor<T>& images, std::span<const int> labels,
              double epsilon, double tau, std::size_t iterations) {
  const T eps = static_cast<T>(epsilon / 255.0);
  const T step = static_cast<T>(tau / 255.0);
  Tensor<T> adv = images;
  if (eps == T(0)) return adv;
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto grad = input_gradient(net, adv, labels);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const T moved = adv[i] + step * sign(grad[i]);
      adv[i] = clip01(std::clamp(moved, images[i] - eps, images[i] + eps));
    }
  }
  return adv;
}

template <typename T>
AttackReport attack_eval(Network<T>& net, const Dataset& data, const AttackConfig& config) {
  config.validate();
  const std::size_t n = config.eval_samples == 0 ? data.size() : std::min(config.eval_samples, data.size());
  if (n == 0) throw InputError("attack evaluation on an empty dataset");
  AttackReport report;
  report.samples = n;
  std::size_t clean = 0, fgsm_ok = 0, bim_ok = 0;
  const double eps = config.epsilon / 255.0;
  // Float rounding in x +/- eps may overshoot the ball by an ulp.
  const double slack = std::is_same_v<T, float> ? 1e-6 : 1e-12;

  auto correct = [&](const Tensor<T>& x, std::span<const int> labels) {
    const auto logits = net.forward(x, Mode::Eval).logits;
    std::size_t c = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) c += argmax_row(logits, i) == static_cast<std::size_t>(labels[i]);
    return c;
  };
  auto check = [&](const Tensor<T>& x, const Tensor<T>& adv) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = std::abs(static_cast<double>(adv[i]) - x[i]);
      report.max_linf = std::max(report.max_linf, d);
      if (d > eps + slack) report.within_ball = false;
      if (adv[i] < T(0) || adv[i] > T(1)) report.within_range = false;
    }
  };

  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
    const std::size_t end = std::min(n, begin + config.batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto x = data.gather_images<T>(idx);
    const auto labels = data.gather_labels(idx);
    clean += correct(x, labels);
    const auto x_fgsm = fgsm(net, x, labels, config.epsilon);
    check(x, x_fgsm);
    fgsm_ok += correct(x_fgsm, labels);
    const auto x_bim = bim(net, x, labels, config.epsilon, config.tau, config.iterations);
    check(x, x_bim);
    bim_ok += correct(x_bim, labels);
  }
  const double total = static_cast<double>(n);
  report.clean_accuracy = clean / total;
  report.fgsm_accuracy = fgsm_ok / total;
  report.bim_accuracy = bim_ok / total;
  return report;
}

#define DCNET_INSTANTIATE(T)                                                                     \
  template Tensor<T> input_gradient(Network<T>&, const Tensor<T>&, std::span<const int>);       \
  template Tensor<T> fgsm(Network<T>&, const Tensor<T>&, std::span<const int>, double);         \
  template Tensor<T> bim(Network<T>&, const Tensor<T>&, std::span<const int>, double, double,   \
                         std::size_t);                                                          \
  template AttackReport attack_eval(Network<T>&, const Dataset&, const AttackConfig&);
DCNET_INSTANTIATE(float)
DCNET_INSTANTIATE(double)
#undef DCNET_INSTANTIATE

}  // namespace dcnet

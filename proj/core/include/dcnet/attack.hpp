#pragma once

#include <span>
#include <string>

#include "dcnet/dataset.hpp"
#include "dcnet/network.hpp"

namespace dcnet {

enum class AttackMethod { Fgsm, Bim };

std::string to_string(AttackMethod method);
AttackMethod parse_attack_method(const std::string& text);

/// epsilon and tau are on the 0-255 pixel scale.
struct AttackConfig {
  AttackMethod method = AttackMethod::Fgsm;
  double epsilon = 8.0;
  double tau = 2.0;
  std::size_t iterations = 20;
  double adv_ratio = 0.5;        // adversarial share of each adv-train batch
  std::size_t eval_samples = 0;  // 0 = whole test set
  std::size_t batch_size = 100;

  void validate() const;
};

/// dL/dx of the mean cross-entropy, evaluated in Mode::Eval (no statistic updates).
template <typename T>
Tensor<T> input_gradient(Network<T>& net, const Tensor<T>& images, std::span<const int> labels);

/// clip(x + eps*sign(grad), 0, 1).
template <typename T>
Tensor<T> fgsm(Network<T>& net, const Tensor<T>& images, std::span<const int> labels,
               double epsilon);

/// N steps of size tau, each followed by clipping to the eps-ball around x and to [0,1].
template <typename T>
Tensor<T> bim(Network<T>& net, const Tensor<T>& images, std::span<const int> labels,
              double epsilon, double tau, std::size_t iterations);

struct AttackReport {
  std::size_t samples = 0;
  double clean_accuracy = 0;
  double fgsm_accuracy = 0;
  double bim_accuracy = 0;
  double max_linf = 0;  // largest |x_adv - x| over all emitted examples, [0,1] scale
  bool within_ball = true;
  bool within_range = true;
};

/// Clean, FGSM and BIM accuracy over the first eval_samples test images.
template <typename T>
AttackReport attack_eval(Network<T>& net, const Dataset& data, const AttackConfig& config);

}  // namespace dcnet

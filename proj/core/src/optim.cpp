#include "dcnet/optim.hpp"

#include <algorithm>
#include <cmath>

#include "dcnet/decoupled.hpp"

namespace dcnet {

std::string to_string(UpdateKind kind) {
  return kind == UpdateKind::Adam ? "adam" : "sgd";
}

std::string to_string(GradientMode mode) {
  return mode == GradientMode::Standard ? "standard" : "weighted";
}

UpdateKind parse_update_kind(const std::string& text) {
  if (text == "adam") return UpdateKind::Adam;
  if (text == "sgd" || text == "sgd_momentum") return UpdateKind::SgdMomentum;
  throw ConfigError("unknown optimizer '" + text + "'");
}

GradientMode parse_gradient_mode(const std::string& text) {
  if (text == "standard") return GradientMode::Standard;
  if (text == "weighted") return GradientMode::Weighted;
  throw ConfigError("unknown gradient mode '" + text + "'");
}

LrSchedule LrSchedule::constant(double lr) {
  return LrSchedule{{{0, lr}}};
}

LrSchedule LrSchedule::step_decay(double base, std::size_t total_steps,
                                  const std::vector<double>& fractions, double factor) {
  LrSchedule s{{{0, base}}};
  double lr = base;
  for (double f : fractions) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("lr decay fraction must lie in (0,1)");
    const auto step = static_cast<std::size_t>(std::llround(f * static_cast<double>(total_steps)));
    lr *= factor;
    if (step == 0 || step <= s.points.back().step) continue;
    s.points.push_back({step, lr});
  }
  return s;
}

double LrSchedule::at(std::size_t step) const {
  double lr = points.front().lr;
  for (const auto& p : points) {
    if (p.step > step) break;
    lr = p.lr;
  }
  return lr;
}

void LrSchedule::validate() const {
  if (points.empty()) throw ConfigError("learning-rate schedule is empty");
  if (points.front().step != 0) throw ConfigError("learning-rate schedule must start at step 0");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].lr > 0.0) || !std::isfinite(points[i].lr)) {
      throw ConfigError("learning rates must be positive");
    }
    if (i > 0 && points[i].step <= points[i - 1].step) {
      throw ConfigError("learning-rate schedule steps must increase");
    }
  }
}

void UpdateRule::validate() const {
  schedule.validate();
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0,1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (projection) {
    if (projection->interval == 0) throw ConfigError("projection interval must be >= 1");
    if (!(projection->s > 0.0)) throw ConfigError("projection target norm must be positive");
  }
}

template <typename T>
Tensor<T> apply_weighted_gradients(const Tensor<T>& grad, const Tensor<T>& weights) {
  require_shape(grad, weights.shape(), "apply_weighted_gradients");
  if (weights.rank() != 2) throw DimensionError("apply_weighted_gradients expects [n,d] tensors");
  const auto norms = row_norms(weights);
  Tensor<T> out = grad;
  const std::size_t d = weights.dim(1);
  for (std::size_t k = 0; k < weights.dim(0); ++k) {
    if (!(norms[k] > T(0))) {
      throw NumericError("weighted gradients: kernel row " + std::to_string(k) + " has zero norm");
    }
    T* row = out.data() + k * d;
    for (std::size_t j = 0; j < d; ++j) row[j] *= norms[k];
  }
  return out;
}

template <typename T>
Tensor<T> project_weights(const Tensor<T>& weights, double s) {
  if (weights.rank() != 2) throw DimensionError("project_weights expects an [n,d] tensor");
  if (!(s > 0.0)) throw DomainError("projection target norm must be positive");
  Tensor<T> out = weights;
  const std::size_t d = weights.dim(1);
  for (std::size_t k = 0; k < weights.dim(0); ++k) {
    T* row = out.data() + k * d;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += static_cast<double>(row[j]) * row[j];
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) {
      throw NumericError("projection: kernel row " + std::to_string(k) + " has zero norm");
    }
    const double scale = s / norm;
    for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<T>(row[j] * scale);
  }
  return out;
}

template <typename T>
Optimizer<T>::Optimizer(UpdateRule rule) : rule_(std::move(rule)) {
  rule_.validate();
}

template <typename T>
void Optimizer<T>::initialize(Network<T>& net) {
  if (!rule_.projection) return;
  for (auto& p : net.params()) {
    if (p.role == ParamRole::DecoupledKernel) *p.value = project_weights(*p.value, rule_.projection->s);
  }
}

template <typename T>
void Optimizer<T>::step(Network<T>& net) {
  step(net.params());
}

template <typename T>
void Optimizer<T>::step(const std::vector<ParamRef<T>>& params) {
  for (const auto& p : params) {
    if (!p.grad->all_finite()) throw NumericError("non-finite gradient in " + p.name);
  }
  const double lr = rule_.schedule.at(t_);
  ++t_;
  const bool project = rule_.projection && t_ % rule_.projection->interval == 0;

  for (const auto& p : params) {
    Tensor<T> transformed;
    const Tensor<T>* grad = p.grad;
    if (p.role == ParamRole::DecoupledKernel && rule_.gradient_mode == GradientMode::Weighted) {
      transformed = apply_weighted_gradients(*p.grad, *p.value);
      grad = &transformed;
    }

    auto [it, fresh] = slots_.try_emplace(p.name);
    Slot& slot = it->second;
    if (fresh) {
      slot.m = Tensor<T>(p.value->shape());
      if (rule_.kind == UpdateKind::Adam) slot.v = Tensor<T>(p.value->shape());
    } else if (slot.m.shape() != p.value->shape()) {
      throw DimensionError("optimizer state shape mismatch for " + p.name);
    }

    auto value = p.value->values();
    const auto g = grad->values();
    auto m = slot.m.values();
    if (rule_.kind == UpdateKind::Adam) {
      auto v = slot.v.values();
      const double t = static_cast<double>(t_);
      const double c1 = 1.0 - std::pow(rule_.beta1, t);
      const double c2 = 1.0 - std::pow(rule_.beta2, t);
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double gi = g[i];
        const double mi = rule_.beta1 * m[i] + (1.0 - rule_.beta1) * gi;
        const double vi = rule_.beta2 * v[i] + (1.0 - rule_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        value[i] = static_cast<T>(value[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + rule_.epsilon));
      }
    } else {
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double mi = rule_.momentum * m[i] + g[i];
        m[i] = static_cast<T>(mi);
        value[i] = static_cast<T>(value[i] - lr * mi);
      }
    }

    if (p.role == ParamRole::Radius) {
      for (auto& r : value) r = std::max(r, static_cast<T>(kMinRho));
    }
    if (project && p.role == ParamRole::DecoupledKernel) {
      *p.value = project_weights(*p.value, rule_.projection->s);
    }
  }
}

template Tensor<float> apply_weighted_gradients(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> apply_weighted_gradients(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> project_weights(const Tensor<float>&, double);
template Tensor<double> project_weights(const Tensor<double>&, double);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace dcnet

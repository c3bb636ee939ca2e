#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>
#include <optional>
#include <string>
#include <utility>

#include "dcnet/im2col.hpp"
#include "dcnet/operator_spec.hpp"
#include "dcnet/tensor.hpp"

namespace dcnet {

// Norms below this are treated as zero: cos(theta) := 0 and no angular gradient.
inline constexpr double kZeroNormThreshold = 1e-12;
// Backward clamps cos(theta) to [-1 + eps, 1 - eps] before differentiating arccos.
inline constexpr double kArccosClamp = 1e-7;
inline constexpr double kMinRho = 1e-3;
inline constexpr double kThetaTolerance = 1e-9;

// ---------------------------------------------------------------------------
// Scalar magnitude functions.
// ---------------------------------------------------------------------------

template <std::floating_point T>
struct MagnitudeTerms {
  T value;
  T d_x_norm;
  T d_w_norm;
  T d_rho;  // derivative w.r.t. the per-kernel radius (not rho_eff)
};

namespace detail {

template <std::floating_point T>
struct BaseMagnitude {
  T value;
  T d_x;
  T d_rho_eff;
};

// h(|x|) with rho already multiplied by the patch-norm scale.
template <std::floating_point T>
BaseMagnitude<T> base_magnitude(const MagnitudeSpec& spec, T x, T rho_eff) noexcept {
  const T alpha = static_cast<T>(spec.alpha);
  const T beta = static_cast<T>(spec.beta);
  switch (spec.kind) {
    case MagnitudeKind::Sphere:
      return {alpha, T(0), T(0)};
    case MagnitudeKind::Ball:
      if (x <= rho_eff) return {alpha * x / rho_eff, alpha / rho_eff, -alpha * x / (rho_eff * rho_eff)};
      return {alpha, T(0), T(0)};
    case MagnitudeKind::Tanh: {
      const T t = std::tanh(x / rho_eff);
      const T sech2 = T(1) - t * t;
      return {alpha * t, alpha * sech2 / rho_eff, -alpha * sech2 * x / (rho_eff * rho_eff)};
    }
    case MagnitudeKind::Linear:
      return {alpha * x, alpha, T(0)};
    case MagnitudeKind::Segmented:
      if (x <= rho_eff) return {alpha * x, alpha, T(0)};
      return {beta * x + alpha * rho_eff - beta * rho_eff, beta, alpha - beta};
    case MagnitudeKind::Log:
      return {alpha * std::log1p(x), alpha / (T(1) + x), T(0)};
    case MagnitudeKind::Mix:
      return {alpha * x + beta * std::log1p(x), alpha + beta / (T(1) + x), T(0)};
  }
  return {T(0), T(0), T(0)};
}

}  // namespace detail

/// Unweighted magnitude h(|x|) with radius rho_eff = rho * E{|x|}.
template <std::floating_point T>
T magnitude(const MagnitudeSpec& spec, T x_norm, T rho_eff) {
  if (!(rho_eff > T(0))) throw DomainError("magnitude: rho_eff must be positive");
  if (!(x_norm >= T(0))) throw DomainError("magnitude: x_norm must be non-negative");
  return detail::base_magnitude(spec, x_norm, rho_eff).value;
}

/// Full magnitude including the weighting mode, with partial derivatives.
/// `norm_scale` is the moving average E{|x|}; rho_eff = rho * norm_scale.
template <std::floating_point T>
MagnitudeTerms<T> magnitude_terms(const OperatorSpec& spec, T x_norm, T w_norm, T rho,
                                  T norm_scale) noexcept {
  const T rho_eff = rho * norm_scale;
  const T alpha = static_cast<T>(spec.magnitude.alpha);
  switch (spec.weighting) {
    case WeightingMode::Unweighted: {
      const auto b = detail::base_magnitude(spec.magnitude, x_norm, rho_eff);
      return {b.value, b.d_x, T(0), b.d_rho_eff * norm_scale};
    }
    case WeightingMode::LinearWeighted: {
      const auto b = detail::base_magnitude(spec.magnitude, x_norm, rho_eff);
      return {b.value * w_norm, b.d_x * w_norm, b.value, b.d_rho_eff * norm_scale * w_norm};
    }
    case WeightingMode::NonlinearCoupled: {
      // alpha * tanh(|x| |w| / rho_eff)
      const T u = x_norm * w_norm / rho_eff;
      const T t = std::tanh(u);
      const T s = alpha * (T(1) - t * t);
      return {alpha * t, s * w_norm / rho_eff, s * x_norm / rho_eff, -s * u / rho};
    }
    case WeightingMode::NonlinearSeparate: {
      // alpha * tanh(|w| / rho) * tanh(|x| / rho_eff)
      const T a = std::tanh(w_norm / rho);
      const T b = std::tanh(x_norm / rho_eff);
      const T da = T(1) - a * a;
      const T db = T(1) - b * b;
      return {alpha * a * b, alpha * a * db / rho_eff, alpha * b * da / rho,
              -alpha * (da * b * w_norm / (rho * rho) + a * db * x_norm / (rho_eff * rho))};
    }
  }
  return {T(0), T(0), T(0), T(0)};
}

// ---------------------------------------------------------------------------
// Scalar angular activations.
// ---------------------------------------------------------------------------

namespace detail {

template <std::floating_point T>
T sigmoid_angular(T theta, T k) noexcept {
  const T half_pi = std::numbers::pi_v<T> / T(2);
  return -std::tanh((theta - half_pi) / (T(2) * k)) / std::tanh(std::numbers::pi_v<T> / (T(4) * k));
}

template <std::floating_point T>
T sigmoid_angular_slope(T theta, T k) noexcept {
  const T half_pi = std::numbers::pi_v<T> / T(2);
  const T t = std::tanh((theta - half_pi) / (T(2) * k));
  return -(T(1) - t * t) / (T(2) * k * std::tanh(std::numbers::pi_v<T> / (T(4) * k)));
}

template <std::floating_point T>
T angular_of_theta(const AngularSpec& spec, T theta) noexcept {
  switch (spec.kind) {
    case AngularKind::LinearAngle:
      return T(1) - T(2) * theta / std::numbers::pi_v<T>;
    case AngularKind::Cosine:
      return std::cos(theta);
    case AngularKind::Sigmoid:
      return sigmoid_angular(theta, static_cast<T>(spec.k));
    case AngularKind::SquareCosine: {
      const T c = std::cos(theta);
      return c * std::abs(c);
    }
  }
  return T(0);
}

}  // namespace detail

/// g(theta) for theta in [0, pi]; values within 1e-9 outside the range are clamped.
template <std::floating_point T>
T angular(const AngularSpec& spec, T theta) {
  const T pi = std::numbers::pi_v<T>;
  if (theta < -T(kThetaTolerance) || theta > pi + T(kThetaTolerance) || std::isnan(theta)) {
    throw DomainError("angular: theta outside [0, pi]");
  }
  return detail::angular_of_theta(spec, std::clamp(theta, T(0), pi));
}

/// g evaluated from cos(theta). Cosine and SquareCosine use cos directly;
/// the others go through arccos of the clamped cosine.
template <std::floating_point T>
T angular_from_cos(const AngularSpec& spec, T cos_theta) noexcept {
  switch (spec.kind) {
    case AngularKind::Cosine:
      return cos_theta;
    case AngularKind::SquareCosine:
      return cos_theta * std::abs(cos_theta);
    case AngularKind::LinearAngle:
    case AngularKind::Sigmoid:
      return detail::angular_of_theta(spec, std::acos(std::clamp(cos_theta, T(-1), T(1))));
  }
  return T(0);
}

/// dg/d(cos theta), with the arccos singularity bounded by clamping.
template <std::floating_point T>
T angular_cos_slope(const AngularSpec& spec, T cos_theta) noexcept {
  switch (spec.kind) {
    case AngularKind::Cosine:
      return T(1);
    case AngularKind::SquareCosine:
      return T(2) * std::abs(cos_theta);
    case AngularKind::LinearAngle:
    case AngularKind::Sigmoid: {
      const T lim = T(1) - static_cast<T>(kArccosClamp);
      const T c = std::clamp(cos_theta, -lim, lim);
      const T dtheta_dc = -T(1) / std::sqrt(T(1) - c * c);
      const T dg_dtheta = spec.kind == AngularKind::LinearAngle
                              ? -T(2) / std::numbers::pi_v<T>
                              : detail::sigmoid_angular_slope(std::acos(c), static_cast<T>(spec.k));
      return dg_dtheta * dtheta_dc;
    }
  }
  return T(0);
}

// ---------------------------------------------------------------------------
// Norm/angle decomposition over patch matrices.
// ---------------------------------------------------------------------------

template <typename T>
struct AngleDecomposition {
  Tensor<T> x_norm;     // [num_patches]
  Tensor<T> w_norm;     // [num_kernels]
  Tensor<T> cos_theta;  // [num_patches, num_kernels]
  Tensor<T> theta;      // same shape as cos_theta; empty unless requested
};

/// cos_theta[p,k] = <x_p, w_k> / (|x_p| |w_k|), clamped to [-1, 1];
/// zero-norm rows give cos_theta = 0.
template <typename T>
AngleDecomposition<T> decompose(const Tensor<T>& patches, const Tensor<T>& weights,
                                bool with_theta = true);

template <typename T>
AngleDecomposition<T> decompose(const PatchMatrix<T>& patches, const Tensor<T>& weights,
                                bool with_theta = true) {
  return decompose(patches.patches, weights, with_theta);
}

// ---------------------------------------------------------------------------
// Decoupled convolution layer.
// ---------------------------------------------------------------------------

template <typename T>
struct DecoupledConvLayer {
  std::string name = "decoupled";
  OperatorSpec spec;
  KernelGeometry geometry;
  Tensor<T> weights;  // [num_kernels, patch_dim], one kernel per row
  Tensor<T> rho;      // [num_kernels], operator radius before scaling
  // Moving average of the input patch norm. Zero until the first training
  // batch, during which it is initialised to that batch's mean.
  T norm_ma = T(0);
  double ma_momentum = 0.01;

  static DecoupledConvLayer create(std::string name, const OperatorSpec& spec,
                                   const KernelGeometry& geometry, std::size_t in_channels,
                                   std::size_t num_kernels);

  std::size_t num_kernels() const { return weights.dim(0); }
  std::size_t patch_dim() const { return weights.dim(1); }
  T norm_scale() const noexcept { return norm_ma > T(0) ? norm_ma : T(1); }
  void clamp_rho() noexcept;
};

/// Patches are rebuilt from `input` during backward, one image at a time.
/// angles.cos_theta is laid out like the output, [batch, K, out_h, out_w];
/// angles.x_norm is indexed by patch (image-major).
template <typename T>
struct DecoupledCache {
  Tensor<T> input;
  ConvGeometry geometry;
  AngleDecomposition<T> angles;
  T norm_scale = T(1);
};

template <typename T>
struct DecoupledForward {
  Tensor<T> output;  // [batch, num_kernels, out_h, out_w]
  DecoupledCache<T> cache;
};

struct GradRequest {
  bool input = true;
  bool params = true;
};

template <typename T>
struct DecoupledGrads {
  Tensor<T> grad_input;                // empty when not requested
  Tensor<T> grad_weights;              // empty when not requested
  std::optional<Tensor<T>> grad_rho;   // present iff params requested and rho is trainable
};

/// output[b,k,i,j] = h(|x_p|, |w_k|) * g(theta(w_k, x_p)). In training mode the
/// patch-norm moving average is updated first and the new value is used.
template <typename T>
DecoupledForward<T> decoupled_forward(DecoupledConvLayer<T>& layer, const Tensor<T>& input,
                                      bool training);

/// Exact gradients of decoupled_forward with the moving average held constant.
template <typename T>
DecoupledGrads<T> decoupled_backward(const DecoupledConvLayer<T>& layer,
                                     const DecoupledCache<T>& cache,
                                     const Tensor<T>& grad_output, GradRequest request = {});

/// (max(0, <w,x>), |w||x| max(0, cos theta)) for two non-zero vectors.
template <typename T>
std::pair<T, T> relu_decoupled_equivalence(const Tensor<T>& w, const Tensor<T>& x);

}  // namespace dcnet

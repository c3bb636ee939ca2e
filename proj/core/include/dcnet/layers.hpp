#pragma once

#include <any>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcnet/decoupled.hpp"
#include "dcnet/tensor.hpp"

namespace dcnet {

enum class Mode { Train, Eval };

// What a parameter is, so the optimizer knows which transforms apply.
enum class ParamRole {
  DecoupledKernel,          // unweighted decoupled kernels: projection / weighted gradients apply
  WeightedDecoupledKernel,  // |w| enters the forward pass
  ConvKernel,
  FcWeight,
  Bias,
  Radius,
  BnScale,
  BnShift,
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
  ParamRole role;
};

// Persistent non-trainable values (moving averages, fixed radii).
template <typename T>
struct StateRef {
  std::string name;
  std::span<T> values;
};

using LayerCache = std::any;

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const noexcept { return name_; }
  virtual std::string_view kind() const = 0;
  virtual std::string describe() const { return std::string(kind()); }

  virtual Shape output_shape(const Shape& input) const = 0;

  virtual Tensor<T> forward(const Tensor<T>& input, Mode mode, LayerCache& cache) = 0;

  /// Returns dL/dinput (empty if not requested); accumulates into parameter grads.
  virtual Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_output,
                             GradRequest request) = 0;

  virtual std::vector<ParamRef<T>> params() { return {}; }
  virtual std::vector<StateRef<T>> state() { return {}; }

  /// Hash of the branch choices a forward pass made (ReLU signs, pooling argmax,
  /// saturation of piecewise magnitudes). Equal signatures mean the pass stayed
  /// inside one smooth piece.
  virtual std::uint64_t branch_signature(const LayerCache& /*cache*/) const { return 0; }

 private:
  std::string name_;
};

template <typename T>
class DecoupledConv final : public Layer<T> {
 public:
  explicit DecoupledConv(DecoupledConvLayer<T> layer);

  std::string_view kind() const override { return "decoupled_conv"; }
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode, LayerCache& cache) override;
  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_output,
                     GradRequest request) override;
  std::vector<ParamRef<T>> params() override;
  std::vector<StateRef<T>> state() override;
  std::uint64_t branch_signature(const LayerCache& cache) const override;

  DecoupledConvLayer<T>& op() noexcept { return layer_; }
  const DecoupledConvLayer<T>& op() const noexcept { return layer_; }
  Tensor<T>& grad_weights() noexcept { return grad_weights_; }
  Tensor<T>& grad_rho() noexcept { return grad_rho_; }

 private:
  DecoupledConvLayer<T> layer_;
  Tensor<T> grad_weights_;
  Tensor<T> grad_rho_;
};

/// Inner-product convolution with bias, kernels stored as rows like DecoupledConv.
template <typename T>
class StandardConv final : public Layer<T> {
 public:
  StandardConv(std::string name, const KernelGeometry& geometry, std::size_t in_channels,
               std::size_t num_kernels);

  std::string_view kind() const override { return "conv"; }
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode, LayerCache& cache) override;
  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_output,
                     GradRequest request) override;
  std::vector<ParamRef<T>> params() override;

  Tensor<T>& weights() noexcept { return weights_; }
  Tensor<T>& bias() noexcept { return bias_; }
  const KernelGeometry& geometry() const noexcept { return geometry_; }

 private:
  KernelGeometry geometry_;
  Tensor<T> weights_, bias_;
  Tensor<T> grad_weights_, grad_bias_;
};

/// Per-channel batch normalization over [N,C,H,W] or [N,C].
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  static constexpr double kEpsilon = 1e-5;

  BatchNorm(std::string name, std::size_t channels, double momentum = 0.1);

  std::string_view kind() const override { return "batchnorm"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<T> forward(const Tensor<T>& input, Mode mode, LayerCache& cache) override;
  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_output,
                     GradRequest request) override;
  std::vector<ParamRef<T>> params() override;
  std::vector<StateRef<T>> state() override;

  Tensor<T>& gamma() noexcept { return gamma_; }
  Tensor<T>& beta() noexcept { return beta_; }
  Tensor<T>& running_mean() noexcept { return running_mean_; }
  Tensor<T>& running_var() noexcept { return running_var_; }

 private:
  std::size_t channels_;
  double momentum_;
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  Tensor<T> grad_gamma_, grad_beta_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::string_view kind() const override { return "relu"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor<T> forward(const Tensor<T>& input, Mode mode, LayerCache& cache) override;
  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_output,
                     GradRequest request) override;
  std::uint64_t branch_signature(const LayerCache& cache) const override;
};

template <typename T>
class MaxPool final : public Layer<T> {
 public:
  MaxPool(std::string name, std::size_t size, std::size_t stride);
  std::string_view kind() const override { return "maxpool"; }
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode, LayerCache& cache) override;
  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_output,
                     GradRequest request) override;
  std::uint64_t branch_signature(const LayerCache& cache) const override;

 private:
  std::size_t size_, stride_;
};

template <typename T>
class AvgPoolGlobal final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::string_view kind() const override { return "avgpool"; }
  Shape output_shape(const Shape& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode, LayerCache& cache) override;
  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_output,
                     GradRequest request) override;
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::string_view kind() const override { return "flatten"; }
  Shape output_shape(const Shape& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode, LayerCache& cache) override;
  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_output,
                     GradRequest request) override;
};

/// y = x W^T + b for x of shape [N, in].
template <typename T>
class FullyConnected final : public Layer<T> {
 public:
  FullyConnected(std::string name, std::size_t in_features, std::size_t out_features);
  std::string_view kind() const override { return "fc"; }
  std::string describe() const override;
  Shape output_shape(const Shape& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode, LayerCache& cache) override;
  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_output,
                     GradRequest request) override;
  std::vector<ParamRef<T>> params() override;

  Tensor<T>& weights() noexcept { return weights_; }
  Tensor<T>& bias() noexcept { return bias_; }

 private:
  Tensor<T> weights_, bias_;
  Tensor<T> grad_weights_, grad_bias_;
};

}  // namespace dcnet

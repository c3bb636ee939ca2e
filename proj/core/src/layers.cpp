#include "dcnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace dcnet {

namespace {

class SignatureHash {
 public:
  void add_bit(bool bit) noexcept { mix(bit ? 0x9eU : 0x3cU); }
  void add(std::uint64_t value) noexcept {
    for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(value >> (8 * i)));
  }
  std::uint64_t value() const noexcept { return state_; }

 private:
  void mix(unsigned char byte) noexcept {
    state_ ^= byte;
    state_ *= 1099511628211ULL;
  }
  std::uint64_t state_ = 14695981039346656037ULL;
};

template <typename C>
const C& cache_as(const LayerCache& cache, const std::string& layer) {
  const C* typed = std::any_cast<C>(&cache);
  if (typed == nullptr) throw UsageError(layer + ": backward called without a forward cache");
  return *typed;
}

template <typename T>
void zero_like(Tensor<T>& grad, const Tensor<T>& value) {
  grad = Tensor<T>(value.shape());
}

}  // namespace

// ---------------------------------------------------------------- DecoupledConv

template <typename T>
DecoupledConv<T>::DecoupledConv(DecoupledConvLayer<T> layer)
    : Layer<T>(layer.name), layer_(std::move(layer)) {
  zero_like(grad_weights_, layer_.weights);
  zero_like(grad_rho_, layer_.rho);
}

template <typename T>
std::string DecoupledConv<T>::describe() const {
  return "decoupled_conv " + std::to_string(layer_.geometry.kernel_h) + "x" +
         std::to_string(layer_.geometry.kernel_w) + " -> " +
         std::to_string(layer_.num_kernels()) + " [" + layer_.spec.describe() + "]";
}

template <typename T>
Shape DecoupledConv<T>::output_shape(const Shape& input) const {
  const auto g = ConvGeometry::make(input, layer_.geometry);
  return {g.batch, layer_.num_kernels(), g.out_h, g.out_w};
}

template <typename T>
Tensor<T> DecoupledConv<T>::forward(const Tensor<T>& input, Mode mode, LayerCache& cache) {
  auto result = decoupled_forward(layer_, input, mode == Mode::Train);
  cache = std::move(result.cache);
  return std::move(result.output);
}

template <typename T>
Tensor<T> DecoupledConv<T>::backward(const LayerCache& cache, const Tensor<T>& grad_output,
                                     GradRequest request) {
  const auto& c = cache_as<DecoupledCache<T>>(cache, this->name());
  auto grads = decoupled_backward(layer_, c, grad_output, request);
  if (request.params) {
    axpy(T(1), grads.grad_weights, grad_weights_);
    if (grads.grad_rho) axpy(T(1), *grads.grad_rho, grad_rho_);
  }
  return std::move(grads.grad_input);
}

template <typename T>
std::vector<ParamRef<T>> DecoupledConv<T>::params() {
  const ParamRole role = layer_.spec.is_unweighted() ? ParamRole::DecoupledKernel
                                                     : ParamRole::WeightedDecoupledKernel;
  std::vector<ParamRef<T>> out{{this->name() + ".weight", &layer_.weights, &grad_weights_, role}};
  if (layer_.spec.rho_trainable()) {
    out.push_back({this->name() + ".rho", &layer_.rho, &grad_rho_, ParamRole::Radius});
  }
  return out;
}

template <typename T>
std::vector<StateRef<T>> DecoupledConv<T>::state() {
  std::vector<StateRef<T>> out{{this->name() + ".norm_ma", std::span<T>(&layer_.norm_ma, 1)}};
  if (!layer_.spec.rho_trainable()) out.push_back({this->name() + ".rho", layer_.rho.values()});
  return out;
}

template <typename T>
std::uint64_t DecoupledConv<T>::branch_signature(const LayerCache& cache) const {
  const auto kind = layer_.spec.magnitude.kind;
  if (kind != MagnitudeKind::Ball && kind != MagnitudeKind::Segmented) return 0;
  const auto& c = cache_as<DecoupledCache<T>>(cache, this->name());
  SignatureHash hash;
  for (std::size_t p = 0; p < c.angles.x_norm.size(); ++p)
    for (std::size_t k = 0; k < layer_.num_kernels(); ++k)
      hash.add_bit(c.angles.x_norm[p] > layer_.rho[k] * c.norm_scale);
  return hash.value();
}

// ----------------------------------------------------------------- StandardConv

namespace {
template <typename T>
struct ConvInputCache {
  Tensor<T> input;
  ConvGeometry geometry;
};
}  // namespace

template <typename T>
StandardConv<T>::StandardConv(std::string name, const KernelGeometry& geometry,
                              std::size_t in_channels, std::size_t num_kernels)
    : Layer<T>(std::move(name)),
      geometry_(geometry),
      weights_({num_kernels, in_channels * geometry.kernel_h * geometry.kernel_w}),
      bias_({num_kernels}) {
  zero_like(grad_weights_, weights_);
  zero_like(grad_bias_, bias_);
}

template <typename T>
std::string StandardConv<T>::describe() const {
  return "conv " + std::to_string(geometry_.kernel_h) + "x" + std::to_string(geometry_.kernel_w) +
         " -> " + std::to_string(weights_.dim(0));
}

template <typename T>
Shape StandardConv<T>::output_shape(const Shape& input) const {
  const auto g = ConvGeometry::make(input, geometry_);
  return {g.batch, weights_.dim(0), g.out_h, g.out_w};
}

template <typename T>
Tensor<T> StandardConv<T>::forward(const Tensor<T>& input, Mode, LayerCache& cache) {
  const ConvGeometry g = ConvGeometry::make(input.shape(), geometry_);
  const std::size_t K = weights_.dim(0), D = weights_.dim(1);
  if (g.patch_dim() != D) {
    throw DimensionError(this->name() + ": input channels do not match kernel patch_dim " +
                         std::to_string(D));
  }
  const std::size_t S = g.out_h * g.out_w;
  AlignedVector<T> cols(D * S);
  Tensor<T> out({g.batch, K, g.out_h, g.out_w});
  for (std::size_t b = 0; b < g.batch; ++b) {
    image_columns(input, g, b, cols.data());
    T* o = out.data() + b * K * S;
    gemm(Trans::No, Trans::No, K, S, D, T(1), weights_.data(), cols.data(), T(0), o);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t s = 0; s < S; ++s) o[k * S + s] += bias_[k];
  }
  cache = ConvInputCache<T>{input, g};
  return out;
}

template <typename T>
Tensor<T> StandardConv<T>::backward(const LayerCache& cache, const Tensor<T>& grad_output,
                                    GradRequest request) {
  const auto& c = cache_as<ConvInputCache<T>>(cache, this->name());
  const ConvGeometry& g = c.geometry;
  const std::size_t K = weights_.dim(0), D = weights_.dim(1);
  const std::size_t S = g.out_h * g.out_w;
  require_shape(grad_output, {g.batch, K, g.out_h, g.out_w}, this->name() + " grad_output");
  AlignedVector<T> cols(D * S);
  AlignedVector<T> col_grads(request.input ? D * S : 0);
  Tensor<T> grad_input;
  if (request.input) grad_input = Tensor<T>(g.input_shape());
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* go = grad_output.data() + b * K * S;
    if (request.params) {
      image_columns(c.input, g, b, cols.data());
      gemm(Trans::No, Trans::Yes, K, D, S, T(1), go, cols.data(), T(1), grad_weights_.data());
      for (std::size_t k = 0; k < K; ++k) {
        T acc = T(0);
        for (std::size_t s = 0; s < S; ++s) acc += go[k * S + s];
        grad_bias_[k] += acc;
      }
    }
    if (request.input) {
      gemm(Trans::Yes, Trans::No, D, S, K, T(1), weights_.data(), go, T(0), col_grads.data());
      image_columns_add(col_grads.data(), g, b, grad_input);
    }
  }
  return grad_input;
}

template <typename T>
std::vector<ParamRef<T>> StandardConv<T>::params() {
  return {{this->name() + ".weight", &weights_, &grad_weights_, ParamRole::ConvKernel},
          {this->name() + ".bias", &bias_, &grad_bias_, ParamRole::Bias}};
}

// -------------------------------------------------------------------- BatchNorm

namespace {
template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;
  std::vector<T> inv_std;
  bool training;
};

struct ChannelLayout {
  std::size_t outer;    // batch
  std::size_t channels;
  std::size_t inner;    // spatial extent
};

template <typename T>
ChannelLayout channel_layout(const Tensor<T>& t, std::size_t channels, const std::string& name) {
  if ((t.rank() != 2 && t.rank() != 4) || t.dim(1) != channels) {
    throw DimensionError(name + ": expected [N," + std::to_string(channels) + ",...], got " +
                         shape_str(t.shape()));
  }
  const std::size_t inner = t.rank() == 4 ? t.dim(2) * t.dim(3) : 1;
  return {t.dim(0), channels, inner};
}
}  // namespace

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, std::size_t channels, double momentum)
    : Layer<T>(std::move(name)),
      channels_(channels),
      momentum_(momentum),
      gamma_({channels}, T(1)),
      beta_({channels}),
      running_mean_({channels}),
      running_var_({channels}, T(1)) {
  zero_like(grad_gamma_, gamma_);
  zero_like(grad_beta_, beta_);
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& input, Mode mode, LayerCache& cache) {
  const auto L = channel_layout(input, channels_, this->name());
  const std::size_t count = L.outer * L.inner;
  BatchNormCache<T> c{Tensor<T>(input.shape()), std::vector<T>(channels_), mode == Mode::Train};
  Tensor<T> out(input.shape());
  for (std::size_t ch = 0; ch < channels_; ++ch) {
    T mean, var;
    if (mode == Mode::Train) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t n = 0; n < L.outer; ++n) {
        const T* src = input.data() + (n * channels_ + ch) * L.inner;
        for (std::size_t i = 0; i < L.inner; ++i) s += src[i];
      }
      const double m = s / static_cast<double>(count);
      for (std::size_t n = 0; n < L.outer; ++n) {
        const T* src = input.data() + (n * channels_ + ch) * L.inner;
        for (std::size_t i = 0; i < L.inner; ++i) s2 += (src[i] - m) * (src[i] - m);
      }
      mean = static_cast<T>(m);
      var = static_cast<T>(s2 / static_cast<double>(count));
      const T unbiased = count > 1 ? static_cast<T>(s2 / static_cast<double>(count - 1)) : var;
      const T mom = static_cast<T>(momentum_);
      running_mean_[ch] = (T(1) - mom) * running_mean_[ch] + mom * mean;
      running_var_[ch] = (T(1) - mom) * running_var_[ch] + mom * unbiased;
    } else {
      mean = running_mean_[ch];
      var = running_var_[ch];
    }
    const T inv_std = T(1) / std::sqrt(var + static_cast<T>(kEpsilon));
    c.inv_std[ch] = inv_std;
    for (std::size_t n = 0; n < L.outer; ++n) {
      const std::size_t off = (n * channels_ + ch) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        const T xhat = (input[off + i] - mean) * inv_std;
        c.normalized[off + i] = xhat;
        out[off + i] = gamma_[ch] * xhat + beta_[ch];
      }
    }
  }
  cache = std::move(c);
  return out;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const LayerCache& cache, const Tensor<T>& grad_output,
                                 GradRequest request) {
  const auto& c = cache_as<BatchNormCache<T>>(cache, this->name());
  require_shape(grad_output, c.normalized.shape(), this->name() + " grad_output");
  const auto L = channel_layout(grad_output, channels_, this->name());
  const double count = static_cast<double>(L.outer * L.inner);
  Tensor<T> grad_input;
  if (request.input) grad_input = Tensor<T>(grad_output.shape());
  for (std::size_t ch = 0; ch < channels_; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < L.outer; ++n) {
      const std::size_t off = (n * channels_ + ch) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        sum_dy += grad_output[off + i];
        sum_dy_xhat += static_cast<double>(grad_output[off + i]) * c.normalized[off + i];
      }
    }
    if (request.params) {
      grad_gamma_[ch] += static_cast<T>(sum_dy_xhat);
      grad_beta_[ch] += static_cast<T>(sum_dy);
    }
    if (!request.input) continue;
    const T scale = gamma_[ch] * c.inv_std[ch];
    const T mean_dy = static_cast<T>(sum_dy / count);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
    for (std::size_t n = 0; n < L.outer; ++n) {
      const std::size_t off = (n * channels_ + ch) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        const T dy = grad_output[off + i];
        grad_input[off + i] =
            c.training ? scale * (dy - mean_dy - c.normalized[off + i] * mean_dy_xhat)
                       : scale * dy;
      }
    }
  }
  return grad_input;
}

template <typename T>
std::vector<ParamRef<T>> BatchNorm<T>::params() {
  return {{this->name() + ".gamma", &gamma_, &grad_gamma_, ParamRole::BnScale},
          {this->name() + ".beta", &beta_, &grad_beta_, ParamRole::BnShift}};
}

template <typename T>
std::vector<StateRef<T>> BatchNorm<T>::state() {
  return {{this->name() + ".running_mean", running_mean_.values()},
          {this->name() + ".running_var", running_var_.values()}};
}

// ------------------------------------------------------------------------- ReLU

namespace {
struct MaskCache {
  std::vector<unsigned char> active;
  Shape shape;
};
}  // namespace

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& input, Mode, LayerCache& cache) {
  MaskCache c{std::vector<unsigned char>(input.size()), input.shape()};
  Tensor<T> out = input;
  for (std::size_t i = 0; i < out.size(); ++i) {
    c.active[i] = out[i] > T(0);
    if (!c.active[i]) out[i] = T(0);
  }
  cache = std::move(c);
  return out;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const LayerCache& cache, const Tensor<T>& grad_output,
                            GradRequest request) {
  const auto& c = cache_as<MaskCache>(cache, this->name());
  require_shape(grad_output, c.shape, this->name() + " grad_output");
  if (!request.input) return {};
  Tensor<T> out = grad_output;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!c.active[i]) out[i] = T(0);
  return out;
}

template <typename T>
std::uint64_t ReLU<T>::branch_signature(const LayerCache& cache) const {
  const auto& c = cache_as<MaskCache>(cache, this->name());
  SignatureHash hash;
  for (auto bit : c.active) hash.add_bit(bit != 0);
  return hash.value();
}

// ---------------------------------------------------------------------- MaxPool

namespace {
struct ArgmaxCache {
  std::vector<std::size_t> source;  // flat input index feeding each output
  Shape input_shape;
  Shape output_shape;
};
}  // namespace

template <typename T>
MaxPool<T>::MaxPool(std::string name, std::size_t size, std::size_t stride)
    : Layer<T>(std::move(name)), size_(size), stride_(stride) {
  if (size == 0 || stride == 0) throw DimensionError("maxpool size and stride must be positive");
}

template <typename T>
std::string MaxPool<T>::describe() const {
  return "maxpool " + std::to_string(size_) + "/" + std::to_string(stride_);
}

template <typename T>
Shape MaxPool<T>::output_shape(const Shape& input) const {
  if (input.size() != 4 || input[2] < size_ || input[3] < size_) {
    throw DimensionError(this->name() + ": cannot pool shape " + shape_str(input));
  }
  return {input[0], input[1], (input[2] - size_) / stride_ + 1, (input[3] - size_) / stride_ + 1};
}

template <typename T>
Tensor<T> MaxPool<T>::forward(const Tensor<T>& input, Mode, LayerCache& cache) {
  const Shape os = output_shape(input.shape());
  Tensor<T> out(os);
  ArgmaxCache c{std::vector<std::size_t>(out.size()), input.shape(), os};
  const std::size_t H = input.dim(2), W = input.dim(3);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < os[0] * os[1]; ++plane) {
    const std::size_t base = plane * H * W;
    for (std::size_t oy = 0; oy < os[2]; ++oy)
      for (std::size_t ox = 0; ox < os[3]; ++ox, ++o) {
        std::size_t best = base + (oy * stride_) * W + ox * stride_;
        for (std::size_t dy = 0; dy < size_; ++dy)
          for (std::size_t dx = 0; dx < size_; ++dx) {
            const std::size_t idx = base + (oy * stride_ + dy) * W + ox * stride_ + dx;
            if (input[idx] > input[best]) best = idx;
          }
        out[o] = input[best];
        c.source[o] = best;
      }
  }
  cache = std::move(c);
  return out;
}

template <typename T>
Tensor<T> MaxPool<T>::backward(const LayerCache& cache, const Tensor<T>& grad_output,
                               GradRequest request) {
  const auto& c = cache_as<ArgmaxCache>(cache, this->name());
  require_shape(grad_output, c.output_shape, this->name() + " grad_output");
  if (!request.input) return {};
  Tensor<T> out(c.input_shape);
  for (std::size_t o = 0; o < grad_output.size(); ++o) out[c.source[o]] += grad_output[o];
  return out;
}

template <typename T>
std::uint64_t MaxPool<T>::branch_signature(const LayerCache& cache) const {
  const auto& c = cache_as<ArgmaxCache>(cache, this->name());
  SignatureHash hash;
  for (auto idx : c.source) hash.add(idx);
  return hash.value();
}

// ---------------------------------------------------------------- AvgPoolGlobal

namespace {
struct ShapeCache {
  Shape input_shape;
};
}  // namespace

template <typename T>
Shape AvgPoolGlobal<T>::output_shape(const Shape& input) const {
  if (input.size() != 4) throw DimensionError(this->name() + ": expected [N,C,H,W]");
  return {input[0], input[1]};
}

template <typename T>
Tensor<T> AvgPoolGlobal<T>::forward(const Tensor<T>& input, Mode, LayerCache& cache) {
  Tensor<T> out(output_shape(input.shape()));
  const std::size_t spatial = input.dim(2) * input.dim(3);
  for (std::size_t plane = 0; plane < out.size(); ++plane) {
    double s = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) s += input[plane * spatial + i];
    out[plane] = static_cast<T>(s / static_cast<double>(spatial));
  }
  cache = ShapeCache{input.shape()};
  return out;
}

template <typename T>
Tensor<T> AvgPoolGlobal<T>::backward(const LayerCache& cache, const Tensor<T>& grad_output,
                                     GradRequest request) {
  const auto& c = cache_as<ShapeCache>(cache, this->name());
  if (!request.input) return {};
  Tensor<T> out(c.input_shape);
  const std::size_t spatial = c.input_shape[2] * c.input_shape[3];
  const T inv = T(1) / static_cast<T>(spatial);
  for (std::size_t plane = 0; plane < grad_output.size(); ++plane)
    for (std::size_t i = 0; i < spatial; ++i) out[plane * spatial + i] = grad_output[plane] * inv;
  return out;
}

// ---------------------------------------------------------------------- Flatten

template <typename T>
Shape Flatten<T>::output_shape(const Shape& input) const {
  if (input.empty()) throw DimensionError(this->name() + ": cannot flatten a scalar");
  return {input[0], shape_numel(input) / input[0]};
}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& input, Mode, LayerCache& cache) {
  cache = ShapeCache{input.shape()};
  return input.reshaped(output_shape(input.shape()));
}

template <typename T>
Tensor<T> Flatten<T>::backward(const LayerCache& cache, const Tensor<T>& grad_output,
                               GradRequest request) {
  const auto& c = cache_as<ShapeCache>(cache, this->name());
  if (!request.input) return {};
  return grad_output.reshaped(c.input_shape);
}

// --------------------------------------------------------------- FullyConnected

namespace {
template <typename T>
struct InputCache {
  Tensor<T> input;
};
}  // namespace

template <typename T>
FullyConnected<T>::FullyConnected(std::string name, std::size_t in_features,
                                  std::size_t out_features)
    : Layer<T>(std::move(name)), weights_({out_features, in_features}), bias_({out_features}) {
  zero_like(grad_weights_, weights_);
  zero_like(grad_bias_, bias_);
}

template <typename T>
std::string FullyConnected<T>::describe() const {
  return "fc " + std::to_string(weights_.dim(1)) + " -> " + std::to_string(weights_.dim(0));
}

template <typename T>
Shape FullyConnected<T>::output_shape(const Shape& input) const {
  if (input.size() != 2 || input[1] != weights_.dim(1)) {
    throw DimensionError(this->name() + ": expected [N," + std::to_string(weights_.dim(1)) +
                         "], got " + shape_str(input));
  }
  return {input[0], weights_.dim(0)};
}

template <typename T>
Tensor<T> FullyConnected<T>::forward(const Tensor<T>& input, Mode, LayerCache& cache) {
  output_shape(input.shape());
  Tensor<T> out = matmul_nt(input, weights_);
  const std::size_t F = weights_.dim(0);
  for (std::size_t n = 0; n < out.dim(0); ++n)
    for (std::size_t f = 0; f < F; ++f) out(n, f) += bias_[f];
  cache = InputCache<T>{input};
  return out;
}

template <typename T>
Tensor<T> FullyConnected<T>::backward(const LayerCache& cache, const Tensor<T>& grad_output,
                                      GradRequest request) {
  const auto& c = cache_as<InputCache<T>>(cache, this->name());
  require_shape(grad_output, {c.input.dim(0), weights_.dim(0)}, this->name() + " grad_output");
  if (request.params) {
    axpy(T(1), matmul_tn(grad_output, c.input), grad_weights_);
    for (std::size_t n = 0; n < grad_output.dim(0); ++n)
      for (std::size_t f = 0; f < weights_.dim(0); ++f) grad_bias_[f] += grad_output(n, f);
  }
  if (!request.input) return {};
  return matmul(grad_output, weights_);
}

template <typename T>
std::vector<ParamRef<T>> FullyConnected<T>::params() {
  return {{this->name() + ".weight", &weights_, &grad_weights_, ParamRole::FcWeight},
          {this->name() + ".bias", &bias_, &grad_bias_, ParamRole::Bias}};
}

#define DCNET_INSTANTIATE_LAYERS(T)   \
  template class DecoupledConv<T>;    \
  template class StandardConv<T>;     \
  template class BatchNorm<T>;        \
  template class ReLU<T>;             \
  template class MaxPool<T>;          \
  template class AvgPoolGlobal<T>;    \
  template class Flatten<T>;          \
  template class FullyConnected<T>;

DCNET_INSTANTIATE_LAYERS(float)
DCNET_INSTANTIATE_LAYERS(double)

}  // namespace dcnet

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dcnet/layers.hpp"
#include "dcnet/loss.hpp"
#include "dcnet/operator_spec.hpp"
#include "dcnet/regularizer.hpp"

namespace dcnet {

/// What to build: a named preset or a custom token list, plus the operator
/// used in every convolution slot.
///
/// Presets:
///   mnist-cnn6         [3x3,32]x2 pool [3x3,64]x2 pool [3x3,128]x2 pool fc256 fc<classes>
///   cifar-cnn9         [3x3,64]x3 pool [3x3,128]x3 pool [3x3,256]x3 pool fc512 fc<classes>
///   cifar-cnn9-attack  [3x3,32]x3 pool [3x3,64]x3 pool [3x3,128]x3 pool fc256 fc<classes>
///   custom             tokens such as conv3:16, conv1:8, pool, gap, fc:64
/// Convolutions use "same" padding; pools are 2x2 max with stride 2. Conv
/// groups are numbered from 1 and advance after each pool.
struct ArchitectureDescription {
  std::string preset = "mnist-cnn6";
  std::vector<std::string> custom_layers;
  std::size_t in_channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t num_classes = 10;

  bool decoupled = true;  // false builds the inner-product baseline
  OperatorSpec op{MagnitudeSpec::defaults(MagnitudeKind::Tanh), AngularSpec{},
                  WeightingMode::Unweighted};
  std::map<std::size_t, OperatorSpec> group_ops;
  bool batch_norm = true;
  bool relu = true;
  double width_multiplier = 1.0;
  double ma_momentum = 0.01;
  RegularizerSpec regularizer;
  bool regularize_fc = false;

  const OperatorSpec& op_for_group(std::size_t group) const;
  void validate() const;
};

template <typename T>
class Network {
 public:
  struct Forward {
    Tensor<T> logits;
    std::vector<LayerCache> caches;
  };

  Network() = default;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> layer);
  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  /// Sequential composition. Dimension errors are re-thrown naming the layer index.
  Forward forward(const Tensor<T>& input, Mode mode);

  /// Back-propagates dL/dlogits through all layers. Returns dL/dinput when
  /// `input_grad` is set, otherwise an empty tensor.
  Tensor<T> backward(const Forward& pass, const Tensor<T>& grad_logits, bool input_grad = false,
                     bool param_grads = true);

  std::vector<ParamRef<T>> params();
  std::vector<StateRef<T>> state();
  void zero_grad();

  /// Adds the regularizer's gradient into kernel grads; returns the penalty.
  T apply_regularizer();

  std::uint64_t branch_signature(const Forward& pass) const;
  Shape output_shape(const Shape& input) const;
  std::string summary() const;

  RegularizerSpec regularizer;
  bool regularize_fc = false;

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// Builds and initialises the network (He fan-in normal init, rho = 1,
/// BN gamma = 1 / beta = 0). Identical seeds give identical parameters.
template <typename T>
Network<T> build_network(const ArchitectureDescription& arch, std::uint64_t seed);

/// Decoupled kernels of every DecoupledConv layer, in network order.
template <typename T>
std::vector<DecoupledConv<T>*> decoupled_layers(Network<T>& net);

}  // namespace dcnet

#include "dcnet/network.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace dcnet {

namespace {

struct PlanItem {
  enum class Kind { Conv, Pool, GlobalAvg, Fc } kind;
  std::size_t kernel = 3;
  std::size_t width = 0;
  std::size_t group = 1;
};

std::vector<PlanItem> repeat_conv(std::size_t width, std::size_t count, std::size_t group) {
  return std::vector<PlanItem>(count, PlanItem{PlanItem::Kind::Conv, 3, width, group});
}

std::size_t parse_count(const std::string& text, const std::string& token) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || v == 0) throw ConfigError("bad layer token '" + token + "'");
  return v;
}

std::vector<PlanItem> make_plan(const ArchitectureDescription& arch) {
  std::vector<PlanItem> plan;
  auto append = [&plan](std::vector<PlanItem> items) {
    plan.insert(plan.end(), items.begin(), items.end());
  };
  const PlanItem pool{PlanItem::Kind::Pool};
  auto cnn9 = [&](std::size_t w1, std::size_t w2, std::size_t w3, std::size_t fc) {
    append(repeat_conv(w1, 3, 1));
    plan.push_back(pool);
    append(repeat_conv(w2, 3, 2));
    plan.push_back(pool);
    append(repeat_conv(w3, 3, 3));
    plan.push_back(pool);
    plan.push_back({PlanItem::Kind::Fc, 0, fc});
  };
  if (arch.preset == "mnist-cnn6") {
    append(repeat_conv(32, 2, 1));
    plan.push_back(pool);
    append(repeat_conv(64, 2, 2));
    plan.push_back(pool);
    append(repeat_conv(128, 2, 3));
    plan.push_back(pool);
    plan.push_back({PlanItem::Kind::Fc, 0, 256});
  } else if (arch.preset == "cifar-cnn9") {
    cnn9(64, 128, 256, 512);
  } else if (arch.preset == "cifar-cnn9-attack") {
    cnn9(32, 64, 128, 256);
  } else if (arch.preset == "custom") {
    if (arch.custom_layers.empty()) throw ConfigError("custom architecture has no layers");
    std::size_t group = 1;
    for (const auto& token : arch.custom_layers) {
      if (token == "pool") {
        plan.push_back(pool);
        ++group;
      } else if (token == "gap") {
        plan.push_back({PlanItem::Kind::GlobalAvg});
      } else if (token.rfind("fc:", 0) == 0) {
        plan.push_back({PlanItem::Kind::Fc, 0, parse_count(token.substr(3), token)});
      } else if (token.rfind("conv", 0) == 0 && token.find(':') != std::string::npos) {
        const auto colon = token.find(':');
        const std::size_t k = parse_count(token.substr(4, colon - 4), token);
        if (k % 2 == 0) throw ConfigError("conv kernel size must be odd: '" + token + "'");
        plan.push_back({PlanItem::Kind::Conv, k, parse_count(token.substr(colon + 1), token), group});
      } else {
        throw ConfigError("unknown layer token '" + token + "'");
      }
    }
  } else {
    throw ConfigError("unknown architecture preset '" + arch.preset + "'");
  }
  return plan;
}

std::size_t scaled_width(std::size_t width, double multiplier) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(width * multiplier)));
}

template <typename T>
void he_normal(Tensor<T>& w, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

}  // namespace

const OperatorSpec& ArchitectureDescription::op_for_group(std::size_t group) const {
  auto it = group_ops.find(group);
  return it == group_ops.end() ? op : it->second;
}

void ArchitectureDescription::validate() const {
  if (in_channels == 0 || height == 0 || width == 0 || num_classes < 2) {
    throw ConfigError("architecture input/class dimensions must be positive (classes >= 2)");
  }
  if (!(width_multiplier > 0.0)) throw ConfigError("width_multiplier must be positive");
  if (!(ma_momentum > 0.0 && ma_momentum < 1.0)) throw ConfigError("ma_momentum must be in (0,1)");
  op.validate();
  for (const auto& [group, spec] : group_ops) spec.validate();
  regularizer.validate();
  make_plan(*this);
}

template <typename T>
void Network<T>::add(std::unique_ptr<Layer<T>> layer) {
  layers_.push_back(std::move(layer));
}

template <typename T>
typename Network<T>::Forward Network<T>::forward(const Tensor<T>& input, Mode mode) {
  Forward pass;
  pass.caches.resize(layers_.size());
  Tensor<T> current = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      current = layers_[i]->forward(current, mode, pass.caches[i]);
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(i) + " (" + layers_[i]->name() + "): " +
                           e.what());
    }
  }
  pass.logits = std::move(current);
  return pass;
}

template <typename T>
Tensor<T> Network<T>::backward(const Forward& pass, const Tensor<T>& grad_logits,
                               bool input_grad, bool param_grads) {
  if (pass.caches.size() != layers_.size()) {
    throw UsageError("network backward: cache count does not match layer count");
  }
  Tensor<T> grad = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const GradRequest request{i > 0 || input_grad, param_grads};
    grad = layers_[i]->backward(pass.caches[i], grad, request);
  }
  return grad;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::params() {
  std::vector<ParamRef<T>> out;
  for (auto& layer : layers_) {
    auto p = layer->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
std::vector<StateRef<T>> Network<T>::state() {
  std::vector<StateRef<T>> out;
  for (auto& layer : layers_) {
    auto s = layer->state();
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : params()) p.grad->fill(T(0));
}

template <typename T>
T Network<T>::apply_regularizer() {
  if (regularizer.kind == RegularizerKind::None || regularizer.lambda == 0.0) return T(0);
  T total = 0;
  for (auto& p : params()) {
    const bool conv = p.role == ParamRole::DecoupledKernel ||
                      p.role == ParamRole::WeightedDecoupledKernel ||
                      p.role == ParamRole::ConvKernel;
    if (!conv && !(regularize_fc && p.role == ParamRole::FcWeight)) continue;
    auto penalty = kernel_rows_penalty(regularizer, *p.value);
    total += penalty.value;
    axpy(T(1), penalty.grad, *p.grad);
  }
  return total;
}

template <typename T>
std::uint64_t Network<T>::branch_signature(const Forward& pass) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h ^= layers_[i]->branch_signature(pass.caches[i]) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return h;
}

template <typename T>
Shape Network<T>::output_shape(const Shape& input) const {
  Shape s = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      s = layers_[i]->output_shape(s);
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(i) + " (" + layers_[i]->name() + "): " +
                           e.what());
    }
  }
  return s;
}

template <typename T>
std::string Network<T>::summary() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    os << i << '\t' << layers_[i]->name() << '\t' << layers_[i]->describe() << '\n';
  }
  return os.str();
}

template <typename T>
Network<T> build_network(const ArchitectureDescription& arch, std::uint64_t seed) {
  arch.validate();
  const auto plan = make_plan(arch);
  std::mt19937_64 rng(seed);
  Network<T> net;
  net.regularizer = arch.regularizer;
  net.regularize_fc = arch.regularize_fc;

  std::size_t channels = arch.in_channels;
  std::size_t conv_index = 0, pool_index = 0, fc_index = 0;
  bool flattened = false;
  std::size_t features = 0;
  Shape shape{1, arch.in_channels, arch.height, arch.width};

  auto push = [&](std::unique_ptr<Layer<T>> layer) {
    shape = layer->output_shape(shape);
    net.add(std::move(layer));
  };
  auto add_fc = [&](std::size_t out, bool hidden) {
    if (!flattened) {
      push(std::make_unique<Flatten<T>>("flatten"));
      flattened = true;
      features = shape[1];
    }
    auto fc = std::make_unique<FullyConnected<T>>("fc" + std::to_string(fc_index), features, out);
    he_normal(fc->weights(), features, rng);
    push(std::move(fc));
    if (hidden && arch.relu) push(std::make_unique<ReLU<T>>("fc_relu" + std::to_string(fc_index)));
    ++fc_index;
    features = out;
  };

  for (const auto& item : plan) {
    switch (item.kind) {
      case PlanItem::Kind::Conv: {
        if (flattened) throw ConfigError("convolution after a fully connected layer");
        const std::size_t width = scaled_width(item.width, arch.width_multiplier);
        const KernelGeometry geom{item.kernel, item.kernel, 1, item.kernel / 2};
        const std::string name = "conv" + std::to_string(conv_index);
        const std::size_t fan_in = channels * item.kernel * item.kernel;
        if (arch.decoupled) {
          auto op = DecoupledConvLayer<T>::create(name, arch.op_for_group(item.group), geom,
                                                  channels, width);
          op.ma_momentum = arch.ma_momentum;
          he_normal(op.weights, fan_in, rng);
          push(std::make_unique<DecoupledConv<T>>(std::move(op)));
        } else {
          auto conv = std::make_unique<StandardConv<T>>(name, geom, channels, width);
          he_normal(conv->weights(), fan_in, rng);
          push(std::move(conv));
        }
        if (arch.batch_norm) {
          push(std::make_unique<BatchNorm<T>>("bn" + std::to_string(conv_index), width));
        }
        if (arch.relu) push(std::make_unique<ReLU<T>>("relu" + std::to_string(conv_index)));
        channels = width;
        ++conv_index;
        break;
      }
      case PlanItem::Kind::Pool:
        if (flattened) throw ConfigError("pooling after a fully connected layer");
        push(std::make_unique<MaxPool<T>>("pool" + std::to_string(pool_index++), 2, 2));
        break;
      case PlanItem::Kind::GlobalAvg:
        if (flattened) throw ConfigError("global pooling after a fully connected layer");
        push(std::make_unique<AvgPoolGlobal<T>>("gap"));
        flattened = true;
        features = shape[1];
        break;
      case PlanItem::Kind::Fc:
        add_fc(scaled_width(item.width, arch.width_multiplier), true);
        break;
    }
  }
  add_fc(arch.num_classes, false);
  return net;
}

template <typename T>
std::vector<DecoupledConv<T>*> decoupled_layers(Network<T>& net) {
  std::vector<DecoupledConv<T>*> out;
  for (std::size_t i = 0; i < net.size(); ++i)
    if (auto* d = dynamic_cast<DecoupledConv<T>*>(&net.layer(i))) out.push_back(d);
  return out;
}

template class Network<float>;
template class Network<double>;
template Network<float> build_network(const ArchitectureDescription&, std::uint64_t);
template Network<double> build_network(const ArchitectureDescription&, std::uint64_t);
template std::vector<DecoupledConv<float>*> decoupled_layers(Network<float>&);
template std::vector<DecoupledConv<double>*> decoupled_layers(Network<double>&);

}  // namespace dcnet

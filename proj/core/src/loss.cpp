#include "dcnet/loss.hpp"

#include <cmath>
#include <string>

namespace dcnet {

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row) {
  const std::size_t C = logits.dim(1);
  const T* z = logits.data() + row * C;
  std::size_t best = 0;
  for (std::size_t c = 1; c < C; ++c)
    if (z[c] > z[best]) best = c;
  return best;
}

template <typename T>
LossResult<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("softmax_xent: logits must be [batch, classes]");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (labels.size() != N) {
    throw DimensionError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(N));
  }
  LossResult<T> out{T(0), Tensor<T>({N, C}), 0};
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(N);
  for (std::size_t n = 0; n < N; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= C) {
      throw InputError("softmax_xent: label " + std::to_string(label) + " outside [0," +
                       std::to_string(C) + ")");
    }
    const T* z = logits.data() + n * C;
    const std::size_t best = argmax_row(logits, n);
    const double zmax = z[best];
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(z[c]) - zmax);
    const double log_denom = std::log(denom);
    total += log_denom - (static_cast<double>(z[label]) - zmax);
    T* g = out.grad_logits.data() + n * C;
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(static_cast<double>(z[c]) - zmax - log_denom);
      g[c] = static_cast<T>((p - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_n);
    }
    if (best == static_cast<std::size_t>(label)) ++out.correct;
  }
  out.loss = static_cast<T>(total * inv_n);
  return out;
}

template LossResult<float> softmax_xent(const Tensor<float>&, std::span<const int>);
template LossResult<double> softmax_xent(const Tensor<double>&, std::span<const int>);
template std::size_t argmax_row(const Tensor<float>&, std::size_t);
template std::size_t argmax_row(const Tensor<double>&, std::size_t);

}  // namespace dcnet

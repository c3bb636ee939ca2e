#pragma once

#include <span>

#include "dcnet/tensor.hpp"

namespace dcnet {

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> grad_logits;  // (softmax - onehot) / batch
  std::size_t correct;    // argmax hits, for accuracy bookkeeping
};

/// Mean softmax cross-entropy over the batch, stabilised by max-subtraction.
template <typename T>
LossResult<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row);

}  // namespace dcnet

#pragma once

#include <string_view>

#include "dcnet/tensor.hpp"

namespace dcnet {

enum class RegularizerKind { None, Orthonormal, Orthogonal, L2 };

struct RegularizerSpec {
  RegularizerKind kind = RegularizerKind::None;
  double lambda = 0.0;

  void validate() const;
};

std::string_view to_string(RegularizerKind kind);
RegularizerKind parse_regularizer_kind(std::string_view name);

template <typename T>
struct PenaltyResult {
  T value;
  Tensor<T> grad;  // same shape as the input matrix
};

/// Penalty on a matrix whose COLUMNS are kernels:
///   Orthonormal  lambda * ||W^T W - I||_F^2
///   Orthogonal   lambda * ||W^T W - diag(W^T W)||_F^2
///   L2           lambda * ||W||_F^2
template <typename T>
PenaltyResult<T> orthogonality_penalty(const RegularizerSpec& spec, const Tensor<T>& columns);

/// Same penalty for a layer that stores kernels as rows; transposes at the boundary.
template <typename T>
PenaltyResult<T> kernel_rows_penalty(const RegularizerSpec& spec, const Tensor<T>& rows);

}  // namespace dcnet

#include "dcnet/regularizer.hpp"

#include <cmath>
#include <string>

#include "dcnet/errors.hpp"

namespace dcnet {

void RegularizerSpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("regularizer lambda must be non-negative");
  }
}

std::string_view to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::None: return "none";
    case RegularizerKind::Orthonormal: return "orthonormal";
    case RegularizerKind::Orthogonal: return "orthogonal";
    case RegularizerKind::L2: return "l2";
  }
  return "?";
}

RegularizerKind parse_regularizer_kind(std::string_view name) {
  for (auto kind : {RegularizerKind::None, RegularizerKind::Orthonormal,
                    RegularizerKind::Orthogonal, RegularizerKind::L2}) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown regularizer '" + std::string(name) +
                    "' (expected none, orthonormal, orthogonal, l2)");
}

template <typename T>
PenaltyResult<T> orthogonality_penalty(const RegularizerSpec& spec, const Tensor<T>& columns) {
  spec.validate();
  if (columns.rank() != 2) throw DimensionError("orthogonality_penalty: expected a matrix");
  PenaltyResult<T> out{T(0), Tensor<T>(columns.shape())};
  if (spec.kind == RegularizerKind::None || spec.lambda == 0.0) return out;
  const T lambda = static_cast<T>(spec.lambda);

  if (spec.kind == RegularizerKind::L2) {
    out.value = lambda * dot(columns, columns);
    out.grad = scaled(columns, T(2) * lambda);
    return out;
  }

  // residual = W^T W - I  (orthonormal)  or  offdiag(W^T W)  (orthogonal)
  Tensor<T> residual = matmul_tn(columns, columns);
  const std::size_t n = residual.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.kind == RegularizerKind::Orthonormal) {
      residual(i, i) -= T(1);
    } else {
      residual(i, i) = T(0);
    }
  }
  out.value = lambda * dot(residual, residual);
  out.grad = scaled(matmul(columns, residual), T(4) * lambda);
  return out;
}

template <typename T>
PenaltyResult<T> kernel_rows_penalty(const RegularizerSpec& spec, const Tensor<T>& rows) {
  auto result = orthogonality_penalty(spec, transpose(rows));
  result.grad = transpose(result.grad);
  return result;
}

template PenaltyResult<float> orthogonality_penalty(const RegularizerSpec&, const Tensor<float>&);
template PenaltyResult<double> orthogonality_penalty(const RegularizerSpec&, const Tensor<double>&);
template PenaltyResult<float> kernel_rows_penalty(const RegularizerSpec&, const Tensor<float>&);
template PenaltyResult<double> kernel_rows_penalty(const RegularizerSpec&, const Tensor<double>&);

}  // namespace dcnet

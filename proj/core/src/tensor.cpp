#include "dcnet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace dcnet {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_dims(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
  }
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got shape " +
                         shape_str(t.shape()));
  }
}

template <typename T>
ConstMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMap<T>(t.data(), static_cast<Eigen::Index>(t.dim(0)),
                     static_cast<Eigen::Index>(t.dim(1)));
}

template <typename T>
void require_same_size(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": size mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  check_dims(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  check_dims(shape);
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0]) {
    throw DimensionError("row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_str(shape_));
  }
  const std::size_t stride = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                             data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void require_finite(const Tensor<T>& t, std::string_view context) {
  const auto values = t.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(context) + ": non-finite value at flat index " +
                         std::to_string(i) + " of tensor " + shape_str(t.shape()));
    }
  }
}

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, std::string_view context) {
  if (t.shape() != expected) {
    throw DimensionError(std::string(context) + ": expected shape " + shape_str(expected) +
                         ", got " + shape_str(t.shape()));
  }
}

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
             K = static_cast<Eigen::Index>(k);
  MutMap<T> C(c, M, N);
  if (beta == T(0)) {
    C.setZero();
  } else if (beta != T(1)) {
    C *= beta;
  }
  const auto A = ta == Trans::No ? ConstMap<T>(a, M, K) : ConstMap<T>(a, K, M);
  const auto B = tb == Trans::No ? ConstMap<T>(b, K, N) : ConstMap<T>(b, N, K);
  if (ta == Trans::No && tb == Trans::No) {
    C.noalias() += alpha * A * B;
  } else if (ta == Trans::No) {
    C.noalias() += alpha * A * B.transpose();
  } else if (tb == Trans::No) {
    C.noalias() += alpha * A.transpose() * B;
  } else {
    C.noalias() += alpha * A.transpose() * B.transpose();
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  MutMap<T>(out.data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(b.dim(1)))
      .noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()) + "^T");
  }
  Tensor<T> out({a.dim(0), b.dim(0)});
  MutMap<T>(out.data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(b.dim(0)))
      .noalias() = as_matrix(a) * as_matrix(b).transpose();
  return out;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn: inner dimensions differ " + shape_str(a.shape()) +
                         "^T * " + shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(1), b.dim(1)});
  MutMap<T>(out.data(), static_cast<Eigen::Index>(a.dim(1)), static_cast<Eigen::Index>(b.dim(1)))
      .noalias() = as_matrix(a).transpose() * as_matrix(b);
  return out;
}

template <typename T>
Tensor<T> row_norms(const Tensor<T>& m) {
  require_matrix(m, "row_norms");
  const std::size_t n = m.dim(0), d = m.dim(1);
  Tensor<T> out({n});
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = m.data() + r * d;
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(row[c]) * row[c];
    out[r] = static_cast<T>(std::sqrt(acc));
  }
  return out;
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_size(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return static_cast<T>(acc);
}

template <typename T>
T sum(const Tensor<T>& t) {
  double acc = 0.0;
  for (T v : t.values()) acc += v;
  return static_cast<T>(acc);
}

template <typename T>
T l2_norm(const Tensor<T>& t) {
  double acc = 0.0;
  for (T v : t.values()) acc += static_cast<double>(v) * v;
  return static_cast<T>(std::sqrt(acc));
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_size(a, b, "max_abs_diff");
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

template <typename T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y) {
  require_same_size(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& t, T alpha) {
  Tensor<T> out = t;
  for (auto& v : out.values()) v *= alpha;
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& m) {
  require_matrix(m, "transpose");
  const std::size_t r = m.dim(0), c = m.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = m(i, j);
  return out;
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() == 0 ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("concat_rows: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<T> values(a.values().begin(), a.values().end());
  values.insert(values.end(), b.values().begin(), b.values().end());
  return Tensor<T>(std::move(s), std::move(values));
}

#define DCNET_INSTANTIATE_TENSOR(T)                                                    \
  template class Tensor<T>;                                                            \
  template void require_finite(const Tensor<T>&, std::string_view);                    \
  template void require_shape(const Tensor<T>&, const Shape&, std::string_view);       \
  template void gemm(Trans, Trans, std::size_t, std::size_t, std::size_t, T, const T*,    \
                     const T*, T, T*);                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> row_norms(const Tensor<T>&);                                      \
  template T dot(const Tensor<T>&, const Tensor<T>&);                                  \
  template T sum(const Tensor<T>&);                                                    \
  template T l2_norm(const Tensor<T>&);                                                \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);                         \
  template void axpy(T, const Tensor<T>&, Tensor<T>&);                                 \
  template Tensor<T> scaled(const Tensor<T>&, T);                                      \
  template Tensor<T> transpose(const Tensor<T>&);                                      \
  template Tensor<T> concat_rows(const Tensor<T>&, const Tensor<T>&);

DCNET_INSTANTIATE_TENSOR(float)
DCNET_INSTANTIATE_TENSOR(double)

}  // namespace dcnet

#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcnet/errors.hpp"

namespace dcnet {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage, so vectorised reductions split the same way on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array. Layout for images is [batch, channels, height, width].
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) noexcept {
    return data_[r * shape_[1] + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * shape_[1] + c];
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h,
                      std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same data, new shape. Element count must match.
  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const;
  void fill(T value);

  /// Rows [begin, end) along the leading axis.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const noexcept;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

// Throws NumericError naming `context` if any value is NaN/Inf.
template <typename T>
void require_finite(const Tensor<T>& t, std::string_view context);

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, std::string_view context);

// a[m,k] * b[k,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a[m,k] * b[n,k]^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
// a[k,m]^T * b[k,n]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

enum class Trans { No, Yes };

/// c[m,n] = alpha * op(a) * op(b) + beta * c on row-major buffers, where op(a)
/// is [m,k] and op(b) is [k,n]. With beta == 0, c is not read.
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c);

/// Euclidean norm of every row of an [n, d] matrix.
template <typename T>
Tensor<T> row_norms(const Tensor<T>& m);

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
T sum(const Tensor<T>& t);
template <typename T>
T l2_norm(const Tensor<T>& t);
template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// y += alpha * x
template <typename T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y);
template <typename T>
Tensor<T> scaled(const Tensor<T>& t, T alpha);
template <typename T>
Tensor<T> transpose(const Tensor<T>& m);

/// Concatenate along the leading axis; trailing dimensions must agree.
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace dcnet

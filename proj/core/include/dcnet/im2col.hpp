#pragma once

#include <cstddef>

#include "dcnet/tensor.hpp"

namespace dcnet {

/// Spatial hyperparameters of a convolution window.
struct KernelGeometry {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  bool operator==(const KernelGeometry&) const = default;
};

/// Full forward geometry: input extent plus the window, with derived output extent.
struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  KernelGeometry kernel;
  std::size_t out_h = 0;
  std::size_t out_w = 0;

  static ConvGeometry make(const Shape& input_shape, const KernelGeometry& kernel);

  std::size_t patch_dim() const noexcept {
    return channels * kernel.kernel_h * kernel.kernel_w;
  }
  std::size_t num_patches() const noexcept { return batch * out_h * out_w; }
  Shape input_shape() const { return {batch, channels, height, width}; }

  bool operator==(const ConvGeometry&) const = default;
};

struct PatchLocation {
  std::size_t batch;
  std::size_t row;
  std::size_t col;
};

/// Patch rows ordered (batch, out_row, out_col); columns ordered (channel, ky, kx).
template <typename T>
struct PatchMatrix {
  Tensor<T> patches;  // [num_patches, patch_dim]
  ConvGeometry geometry;

  PatchLocation location(std::size_t row) const noexcept {
    const std::size_t per_image = geometry.out_h * geometry.out_w;
    const std::size_t within = row % per_image;
    return {row / per_image, within / geometry.out_w, within % geometry.out_w};
  }
};

template <typename T>
PatchMatrix<T> im2col(const Tensor<T>& input, const KernelGeometry& kernel);

/// Patch rows of images [first, last) written to dst, which holds
/// (last - first) * out_h * out_w rows of patch_dim values.
template <typename T>
void im2col_images(const Tensor<T>& input, const ConvGeometry& geometry, std::size_t first,
                   std::size_t last, T* dst);

/// Scatter-adds patch cotangents of images [first, last) into grad_input.
template <typename T>
void col2im_images_add(const T* patch_grads, const ConvGeometry& geometry, std::size_t first,
                       std::size_t last, Tensor<T>& grad_input);

/// Patches of one image stored transposed: dst is [patch_dim, out_h * out_w],
/// so row j holds patch element j for every output position.
template <typename T>
void image_columns(const Tensor<T>& input, const ConvGeometry& geometry, std::size_t image,
                   T* dst);

/// Adjoint of image_columns, accumulated into grad_input.
template <typename T>
void image_columns_add(const T* columns, const ConvGeometry& geometry, std::size_t image,
                       Tensor<T>& grad_input);

/// Adjoint of im2col: scatter-adds patch cotangents back onto the input grid.
template <typename T>
Tensor<T> col2im_grad(const Tensor<T>& patch_grads, const ConvGeometry& geometry);

template <typename T>
Tensor<T> col2im_grad(const PatchMatrix<T>& patch_grads) {
  return col2im_grad(patch_grads.patches, patch_grads.geometry);
}

// [num_patches, K] <-> [batch, K, out_h, out_w]
template <typename T>
Tensor<T> patch_rows_to_nchw(const Tensor<T>& rows, const ConvGeometry& geometry);
template <typename T>
Tensor<T> nchw_to_patch_rows(const Tensor<T>& maps, const ConvGeometry& geometry);

}  // namespace dcnet

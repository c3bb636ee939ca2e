#include "dcnet/im2col.hpp"

#include <algorithm>
#include <string>

namespace dcnet {

ConvGeometry ConvGeometry::make(const Shape& input_shape, const KernelGeometry& kernel) {
  if (input_shape.size() != 4) {
    throw DimensionError("convolution input must be [batch,C,H,W], got " +
                         shape_str(input_shape));
  }
  if (kernel.kernel_h == 0 || kernel.kernel_w == 0 || kernel.stride == 0) {
    throw DimensionError("kernel size and stride must be at least 1");
  }
  ConvGeometry g;
  g.batch = input_shape[0];
  g.channels = input_shape[1];
  g.height = input_shape[2];
  g.width = input_shape[3];
  g.kernel = kernel;
  const std::size_t padded_h = g.height + 2 * kernel.padding;
  const std::size_t padded_w = g.width + 2 * kernel.padding;
  if (padded_h < kernel.kernel_h || padded_w < kernel.kernel_w) {
    throw DimensionError("kernel " + std::to_string(kernel.kernel_h) + "x" +
                         std::to_string(kernel.kernel_w) + " larger than padded input " +
                         shape_str(input_shape));
  }
  g.out_h = (padded_h - kernel.kernel_h) / kernel.stride + 1;
  g.out_w = (padded_w - kernel.kernel_w) / kernel.stride + 1;
  return g;
}

template <typename T>
void im2col_images(const Tensor<T>& input, const ConvGeometry& g, std::size_t first,
                   std::size_t last, T* dst) {
  if (input.shape() != g.input_shape()) {
    throw DimensionError("im2col: input " + shape_str(input.shape()) + " does not match geometry " +
                         shape_str(g.input_shape()));
  }
  if (first > last || last > g.batch) throw DimensionError("im2col: image range out of bounds");
  const std::size_t kh = g.kernel.kernel_h, kw = g.kernel.kernel_w;
  const auto pad = static_cast<std::ptrdiff_t>(g.kernel.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.kernel.stride);
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);

  for (std::size_t b = first; b < last; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy) * stride - pad;
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox) * stride - pad;
        const bool inside = x0 >= 0 && x0 + static_cast<std::ptrdiff_t>(kw) <= W;
        for (std::size_t c = 0; c < g.channels; ++c) {
          const T* plane = input.data() + (b * g.channels + c) * g.height * g.width;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t y = y0 + static_cast<std::ptrdiff_t>(ky);
            if (y < 0 || y >= H) {
              std::fill_n(dst, kw, T(0));
              dst += kw;
              continue;
            }
            const T* line = plane + y * W;
            if (inside) {
              std::copy_n(line + x0, kw, dst);
              dst += kw;
              continue;
            }
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t x = x0 + static_cast<std::ptrdiff_t>(kx);
              *dst++ = (x >= 0 && x < W) ? line[x] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_images_add(const T* src, const ConvGeometry& g, std::size_t first, std::size_t last,
                       Tensor<T>& out) {
  if (out.shape() != g.input_shape()) {
    throw DimensionError("col2im: gradient buffer " + shape_str(out.shape()) +
                         " does not match geometry " + shape_str(g.input_shape()));
  }
  if (first > last || last > g.batch) throw DimensionError("col2im: image range out of bounds");
  const std::size_t kh = g.kernel.kernel_h, kw = g.kernel.kernel_w;
  const auto pad = static_cast<std::ptrdiff_t>(g.kernel.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.kernel.stride);
  const auto H = static_cast<std::ptrdiff_t>(g.height);
  const auto W = static_cast<std::ptrdiff_t>(g.width);

  for (std::size_t b = first; b < last; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy) * stride - pad;
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox) * stride - pad;
        const bool inside = x0 >= 0 && x0 + static_cast<std::ptrdiff_t>(kw) <= W;
        for (std::size_t c = 0; c < g.channels; ++c) {
          T* plane = out.data() + (b * g.channels + c) * g.height * g.width;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t y = y0 + static_cast<std::ptrdiff_t>(ky);
            if (y < 0 || y >= H) {
              src += kw;
              continue;
            }
            T* line = plane + y * W;
            if (inside) {
              for (std::size_t kx = 0; kx < kw; ++kx) line[x0 + static_cast<std::ptrdiff_t>(kx)] += src[kx];
              src += kw;
              continue;
            }
            for (std::size_t kx = 0; kx < kw; ++kx, ++src) {
              const std::ptrdiff_t x = x0 + static_cast<std::ptrdiff_t>(kx);
              if (x >= 0 && x < W) line[x] += *src;
            }
          }
        }
      }
    }
  }
}

namespace {

// Output columns [lo, hi) whose input column ox * stride - pad + kx lies inside [0, W).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t stride,
                                                std::size_t pad, std::size_t k, std::size_t extent) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(extent) - 1 - off;
  std::ptrdiff_t hi = last < 0 ? 0 : last / s + 1;
  hi = std::min(hi, static_cast<std::ptrdiff_t>(out));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void check_image(const Shape& shape, const ConvGeometry& g, std::size_t image, const char* what) {
  if (shape != g.input_shape()) {
    throw DimensionError(std::string(what) + ": tensor " + shape_str(shape) +
                         " does not match geometry " + shape_str(g.input_shape()));
  }
  if (image >= g.batch) throw DimensionError(std::string(what) + ": image index out of range");
}

}  // namespace

template <typename T>
void image_columns(const Tensor<T>& input, const ConvGeometry& g, std::size_t image, T* dst) {
  check_image(input.shape(), g, image, "image_columns");
  const std::size_t kh = g.kernel.kernel_h, kw = g.kernel.kernel_w;
  const std::size_t stride = g.kernel.stride, pad = g.kernel.padding;
  const std::size_t S = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = input.data() + (image * g.channels + c) * g.height * g.width;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      const auto [ylo, yhi] = valid_range(g.out_h, stride, pad, ky, g.height);
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const auto [xlo, xhi] = valid_range(g.out_w, stride, pad, kx, g.width);
        T* row = dst + ((c * kh + ky) * kw + kx) * S;
        std::fill_n(row, ylo * g.out_w, T(0));
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          T* d = row + oy * g.out_w;
          const T* line = plane + (oy * stride + ky - pad) * g.width;
          std::fill_n(d, xlo, T(0));
          if (stride == 1) {
            std::copy(line + (xlo + kx - pad), line + (xhi + kx - pad), d + xlo);
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox] = line[ox * stride + kx - pad];
          }
          std::fill(d + xhi, d + g.out_w, T(0));
        }
        std::fill(row + yhi * g.out_w, row + S, T(0));
      }
    }
  }
}

template <typename T>
void image_columns_add(const T* columns, const ConvGeometry& g, std::size_t image,
                       Tensor<T>& grad_input) {
  check_image(grad_input.shape(), g, image, "image_columns_add");
  const std::size_t kh = g.kernel.kernel_h, kw = g.kernel.kernel_w;
  const std::size_t stride = g.kernel.stride, pad = g.kernel.padding;
  const std::size_t S = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = grad_input.data() + (image * g.channels + c) * g.height * g.width;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      const auto [ylo, yhi] = valid_range(g.out_h, stride, pad, ky, g.height);
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const auto [xlo, xhi] = valid_range(g.out_w, stride, pad, kx, g.width);
        const T* row = columns + ((c * kh + ky) * kw + kx) * S;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const T* s = row + oy * g.out_w;
          T* line = plane + (oy * stride + ky - pad) * g.width;
          for (std::size_t ox = xlo; ox < xhi; ++ox) line[ox * stride + kx - pad] += s[ox];
        }
      }
    }
  }
}

template <typename T>
PatchMatrix<T> im2col(const Tensor<T>& input, const KernelGeometry& kernel) {
  const ConvGeometry g = ConvGeometry::make(input.shape(), kernel);
  PatchMatrix<T> out{Tensor<T>({g.num_patches(), g.patch_dim()}), g};
  im2col_images(input, g, 0, g.batch, out.patches.data());
  return out;
}

template <typename T>
Tensor<T> col2im_grad(const Tensor<T>& patch_grads, const ConvGeometry& g) {
  require_shape(patch_grads, {g.num_patches(), g.patch_dim()}, "col2im_grad");
  Tensor<T> out(g.input_shape());
  col2im_images_add(patch_grads.data(), g, 0, g.batch, out);
  return out;
}

template <typename T>
Tensor<T> patch_rows_to_nchw(const Tensor<T>& rows, const ConvGeometry& g) {
  if (rows.rank() != 2 || rows.dim(0) != g.num_patches()) {
    throw DimensionError("patch_rows_to_nchw: expected [" + std::to_string(g.num_patches()) +
                         ",K], got " + shape_str(rows.shape()));
  }
  const std::size_t K = rows.dim(1), spatial = g.out_h * g.out_w;
  Tensor<T> out({g.batch, K, g.out_h, g.out_w});
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t s = 0; s < spatial; ++s) {
      const T* src = rows.data() + (b * spatial + s) * K;
      T* dst = out.data() + b * K * spatial + s;
      for (std::size_t k = 0; k < K; ++k) dst[k * spatial] = src[k];
    }
  return out;
}

template <typename T>
Tensor<T> nchw_to_patch_rows(const Tensor<T>& maps, const ConvGeometry& g) {
  if (maps.rank() != 4 || maps.dim(0) != g.batch || maps.dim(2) != g.out_h ||
      maps.dim(3) != g.out_w) {
    throw DimensionError("nchw_to_patch_rows: map shape " + shape_str(maps.shape()) +
                         " does not match geometry");
  }
  const std::size_t K = maps.dim(1), spatial = g.out_h * g.out_w;
  Tensor<T> out({g.num_patches(), K});
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t s = 0; s < spatial; ++s) {
      T* dst = out.data() + (b * spatial + s) * K;
      const T* src = maps.data() + b * K * spatial + s;
      for (std::size_t k = 0; k < K; ++k) dst[k] = src[k * spatial];
    }
  return out;
}

#define DCNET_INSTANTIATE_IM2COL(T)                                                   \
  template PatchMatrix<T> im2col(const Tensor<T>&, const KernelGeometry&);            \
  template void im2col_images(const Tensor<T>&, const ConvGeometry&, std::size_t,       \
                              std::size_t, T*);                                         \
  template void col2im_images_add(const T*, const ConvGeometry&, std::size_t, std::size_t, \
                                  Tensor<T>&);                                          \
  template void image_columns(const Tensor<T>&, const ConvGeometry&, std::size_t, T*);  \
  template void image_columns_add(const T*, const ConvGeometry&, std::size_t, Tensor<T>&); \
  template Tensor<T> col2im_grad(const Tensor<T>&, const ConvGeometry&);              \
  template Tensor<T> patch_rows_to_nchw(const Tensor<T>&, const ConvGeometry&);       \
  template Tensor<T> nchw_to_patch_rows(const Tensor<T>&, const ConvGeometry&);

DCNET_INSTANTIATE_IM2COL(float)
DCNET_INSTANTIATE_IM2COL(double)

}  // namespace dcnet

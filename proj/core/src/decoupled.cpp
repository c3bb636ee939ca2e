#include "dcnet/decoupled.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

namespace dcnet {

namespace {

template <typename T>
using Column = Eigen::Array<T, Eigen::Dynamic, 1>;
template <typename T>
using ColumnMap = Eigen::Map<Column<T>>;
template <typename T>
using ConstColumnMap = Eigen::Map<const Column<T>>;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

// h and its partials for kernel k against a run of patches.
template <typename T>
struct MagnitudeRun {
  Column<T> value, d_x, d_w, d_rho;
  explicit MagnitudeRun(std::size_t n)
      : value(Column<T>::Zero(idx(n))), d_x(Column<T>::Zero(idx(n))),
        d_w(Column<T>::Zero(idx(n))), d_rho(Column<T>::Zero(idx(n))) {}
};

template <typename T>
void magnitude_run(const OperatorSpec& spec, const ConstColumnMap<T>& x_norm, T w_norm, T rho,
                   T scale, bool derivs, MagnitudeRun<T>& out) {
  if (spec.weighting == WeightingMode::Unweighted && spec.magnitude.kind == MagnitudeKind::Tanh) {
    const T alpha = static_cast<T>(spec.magnitude.alpha);
    const T inv_re = T(1) / (rho * scale);
    const Column<T> t = (x_norm * inv_re).tanh();
    out.value = alpha * t;
    if (derivs) {
      const Column<T> s = alpha * (T(1) - t.square());
      out.d_x = s * inv_re;
      out.d_rho = -s * x_norm * (inv_re / rho);
    }
    return;
  }
  for (Eigen::Index i = 0; i < x_norm.size(); ++i) {
    const auto m = magnitude_terms(spec, x_norm[i], w_norm, rho, scale);
    out.value[i] = m.value;
    out.d_x[i] = m.d_x_norm;
    out.d_w[i] = m.d_w_norm;
    out.d_rho[i] = m.d_rho;
  }
}

template <typename T>
void angular_run(const AngularSpec& spec, const ConstColumnMap<T>& c, Column<T>& g,
                 Column<T>* slope) {
  switch (spec.kind) {
    case AngularKind::Cosine:
      g = c;
      if (slope) slope->setOnes(c.size());
      return;
    case AngularKind::SquareCosine:
      g = c * c.abs();
      if (slope) *slope = T(2) * c.abs();
      return;
    default:
      g.resize(c.size());
      if (slope) slope->resize(c.size());
      for (Eigen::Index i = 0; i < c.size(); ++i) {
        g[i] = angular_from_cos(spec, c[i]);
        if (slope) (*slope)[i] = angular_cos_slope(spec, c[i]);
      }
  }
}

// Column norms of a row-major [rows, cols] block.
template <typename T>
void column_norms(const T* data, std::size_t rows, std::size_t cols, T* out) {
  using Block = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Block> m(data, idx(rows), idx(cols));
  ColumnMap<T>(out, idx(cols)) = m.square().colwise().sum().sqrt().transpose();
}

}  // namespace

template <typename T>
AngleDecomposition<T> decompose(const Tensor<T>& patches, const Tensor<T>& weights,
                                bool with_theta) {
  if (patches.rank() != 2 || weights.rank() != 2 || patches.dim(1) != weights.dim(1)) {
    throw DimensionError("decompose: patch matrix " + shape_str(patches.shape()) +
                         " does not match kernel matrix " + shape_str(weights.shape()));
  }
  AngleDecomposition<T> out;
  out.x_norm = row_norms(patches);
  out.w_norm = row_norms(weights);
  out.cos_theta = matmul_nt(patches, weights);

  const std::size_t P = patches.dim(0), K = weights.dim(0);
  const T eps = static_cast<T>(kZeroNormThreshold);
  std::vector<T> inv_w(K);
  for (std::size_t k = 0; k < K; ++k)
    inv_w[k] = out.w_norm[k] < eps ? T(0) : T(1) / out.w_norm[k];
  for (std::size_t p = 0; p < P; ++p) {
    T* row = out.cos_theta.data() + p * K;
    const T xn = out.x_norm[p];
    const T inv_x = xn < eps ? T(0) : T(1) / xn;
    for (std::size_t k = 0; k < K; ++k)
      row[k] = std::clamp(row[k] * inv_x * inv_w[k], T(-1), T(1));
  }
  if (with_theta) {
    out.theta = out.cos_theta;
    for (auto& v : out.theta.values()) v = std::acos(v);
  }
  return out;
}

template <typename T>
DecoupledConvLayer<T> DecoupledConvLayer<T>::create(std::string name, const OperatorSpec& spec,
                                                    const KernelGeometry& geometry,
                                                    std::size_t in_channels,
                                                    std::size_t num_kernels) {
  spec.validate();
  DecoupledConvLayer layer;
  layer.name = std::move(name);
  layer.spec = spec;
  layer.geometry = geometry;
  layer.weights = Tensor<T>({num_kernels, in_channels * geometry.kernel_h * geometry.kernel_w});
  layer.rho = Tensor<T>({num_kernels}, T(1));
  return layer;
}

template <typename T>
void DecoupledConvLayer<T>::clamp_rho() noexcept {
  for (auto& r : rho.values()) r = std::max(r, static_cast<T>(kMinRho));
}

template <typename T>
DecoupledForward<T> decoupled_forward(DecoupledConvLayer<T>& layer, const Tensor<T>& input,
                                      bool training) {
  const ConvGeometry g = ConvGeometry::make(input.shape(), layer.geometry);
  if (g.patch_dim() != layer.patch_dim()) {
    throw DimensionError(layer.name + ": input has " + std::to_string(g.channels) +
                         " channels, kernels expect patch_dim " +
                         std::to_string(layer.patch_dim()));
  }
  const std::size_t P = g.num_patches(), K = layer.num_kernels(), D = layer.patch_dim();
  const std::size_t S = g.out_h * g.out_w;
  const T eps = static_cast<T>(kZeroNormThreshold);

  DecoupledForward<T> result;
  auto& cache = result.cache;
  cache.input = input;
  cache.geometry = g;
  auto& ang = cache.angles;
  ang.w_norm = row_norms(layer.weights);
  ang.x_norm = Tensor<T>({P});
  ang.cos_theta = Tensor<T>({g.batch, K, g.out_h, g.out_w});
  std::vector<T> inv_w(K);
  for (std::size_t k = 0; k < K; ++k) inv_w[k] = ang.w_norm[k] < eps ? T(0) : T(1) / ang.w_norm[k];

  AlignedVector<T> cols(D * S);
  Column<T> inv_x(idx(S));
  double norm_total = 0.0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    image_columns(input, g, b, cols.data());
    T* xn = ang.x_norm.data() + b * S;
    column_norms(cols.data(), D, S, xn);
    const ConstColumnMap<T> xv(xn, idx(S));
    norm_total += static_cast<double>(xv.sum());
    inv_x = (xv < eps).select(T(0), xv.inverse());
    T* cos = ang.cos_theta.data() + b * K * S;
    gemm(Trans::No, Trans::No, K, S, D, T(1), layer.weights.data(), cols.data(), T(0), cos);
    for (std::size_t k = 0; k < K; ++k) {
      ColumnMap<T> row(cos + k * S, idx(S));
      row = (row * inv_x * inv_w[k]).max(T(-1)).min(T(1));
    }
  }

  if (training) {
    const T batch_mean = static_cast<T>(norm_total / static_cast<double>(P));
    if (layer.norm_ma > T(0)) {
      const T m = static_cast<T>(layer.ma_momentum);
      layer.norm_ma = (T(1) - m) * layer.norm_ma + m * batch_mean;
    } else {
      layer.norm_ma = batch_mean;
    }
  }
  cache.norm_scale = layer.norm_scale();

  const OperatorSpec& spec = layer.spec;
  const T scale = cache.norm_scale;
  result.output = Tensor<T>({g.batch, K, g.out_h, g.out_w});
  MagnitudeRun<T> mag(S);
  Column<T> gv(idx(S));
  for (std::size_t b = 0; b < g.batch; ++b) {
    const ConstColumnMap<T> xv(ang.x_norm.data() + b * S, idx(S));
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t off = (b * K + k) * S;
      magnitude_run(spec, xv, ang.w_norm[k], layer.rho[k], scale, false, mag);
      angular_run(spec.angular, ConstColumnMap<T>(ang.cos_theta.data() + off, idx(S)), gv,
                  static_cast<Column<T>*>(nullptr));
      ColumnMap<T>(result.output.data() + off, idx(S)) = mag.value * gv;
    }
  }
  if (!result.output.all_finite()) {
    throw NumericError(layer.name + ": non-finite output in decoupled forward (" +
                       spec.describe() + ")");
  }
  return result;
}

template <typename T>
DecoupledGrads<T> decoupled_backward(const DecoupledConvLayer<T>& layer,
                                     const DecoupledCache<T>& cache,
                                     const Tensor<T>& grad_output, GradRequest request) {
  const ConvGeometry& g = cache.geometry;
  if (cache.input.empty() || cache.angles.cos_theta.empty()) {
    throw UsageError(layer.name + ": backward called without a forward cache");
  }
  const std::size_t K = layer.num_kernels(), D = layer.patch_dim();
  const std::size_t S = g.out_h * g.out_w;
  require_shape(grad_output, {g.batch, K, g.out_h, g.out_w}, layer.name + " grad_output");

  const OperatorSpec& spec = layer.spec;
  const auto& ang = cache.angles;
  const T scale = cache.norm_scale;
  const T eps = static_cast<T>(kZeroNormThreshold);
  const bool want_rho = request.params && spec.rho_trainable();

  std::vector<double> w_self(K, 0.0);  // coefficient multiplying w_k in grad_W
  std::vector<double> rho_acc(K, 0.0);
  std::vector<T> inv_w(K);
  for (std::size_t k = 0; k < K; ++k) inv_w[k] = ang.w_norm[k] < eps ? T(0) : T(1) / ang.w_norm[k];

  DecoupledGrads<T> grads;
  if (request.params) grads.grad_weights = Tensor<T>({K, D});
  if (request.input) grads.grad_input = Tensor<T>(g.input_shape());

  AlignedVector<T> cols(D * S);
  AlignedVector<T> col_grads(request.input ? D * S : 0);
  // coupling[k,s] = dL/dcos / (|x_s| |w_k|): weight of the cross terms.
  AlignedVector<T> coupling(K * S);
  Column<T> x_self(idx(S));  // coefficient multiplying x_s in grad_X
  Column<T> inv_x(idx(S)), gv(idx(S)), slope(idx(S)), a(idx(S));
  MagnitudeRun<T> mag(S);

  for (std::size_t b = 0; b < g.batch; ++b) {
    const ConstColumnMap<T> xv(ang.x_norm.data() + b * S, idx(S));
    inv_x = (xv < eps).select(T(0), xv.inverse());
    const Column<T> inv_x2 = inv_x.square();
    x_self.setZero();
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t off = (b * K + k) * S;
      const ConstColumnMap<T> go(grad_output.data() + off, idx(S));
      const ConstColumnMap<T> c(ang.cos_theta.data() + off, idx(S));
      magnitude_run(spec, xv, ang.w_norm[k], layer.rho[k], scale, true, mag);
      angular_run(spec.angular, c, gv, &slope);
      if (inv_w[k] == T(0)) {
        a.setZero();
      } else {
        a = (inv_x > T(0)).select(go * mag.value * slope, T(0));
      }
      ColumnMap<T>(coupling.data() + k * S, idx(S)) = a * inv_x * inv_w[k];
      const Column<T> gg = go * gv;
      // grad_X_s gets -x_s * (a c / |x|^2 - go g dh/d|x| / |x|)
      x_self += a * c * inv_x2 - gg * mag.d_x * inv_x;
      w_self[k] += static_cast<double>(
          (a * c * (inv_w[k] * inv_w[k]) - gg * mag.d_w * inv_w[k]).sum());
      if (want_rho) rho_acc[k] += static_cast<double>((gg * mag.d_rho).sum());
    }

    image_columns(cache.input, g, b, cols.data());
    if (request.params) {
      gemm(Trans::No, Trans::Yes, K, D, S, T(1), coupling.data(), cols.data(), T(1),
           grads.grad_weights.data());
    }
    if (request.input) {
      gemm(Trans::Yes, Trans::No, D, S, K, T(1), layer.weights.data(), coupling.data(), T(0),
           col_grads.data());
      for (std::size_t d = 0; d < D; ++d) {
        ColumnMap<T>(col_grads.data() + d * S, idx(S)) -=
            x_self * ConstColumnMap<T>(cols.data() + d * S, idx(S));
      }
      image_columns_add(col_grads.data(), g, b, grads.grad_input);
    }
  }

  if (request.params) {
    for (std::size_t k = 0; k < K; ++k) {
      const T coef = static_cast<T>(w_self[k]);
      T* gw = grads.grad_weights.data() + k * D;
      const T* w = layer.weights.data() + k * D;
      for (std::size_t d = 0; d < D; ++d) gw[d] -= coef * w[d];
    }
    if (want_rho) {
      grads.grad_rho = Tensor<T>({K});
      for (std::size_t k = 0; k < K; ++k) (*grads.grad_rho)[k] = static_cast<T>(rho_acc[k]);
    }
  }
  return grads;
}

template <typename T>
std::pair<T, T> relu_decoupled_equivalence(const Tensor<T>& w, const Tensor<T>& x) {
  if (w.size() != x.size()) throw DimensionError("relu_decoupled_equivalence: size mismatch");
  const T inner = dot(w, x);
  const T wn = l2_norm(w), xn = l2_norm(x);
  if (wn == T(0) || xn == T(0)) throw NumericError("relu_decoupled_equivalence: zero vector");
  const T cos_theta = std::clamp(inner / (wn * xn), T(-1), T(1));
  return {std::max(T(0), inner), wn * xn * std::max(T(0), cos_theta)};
}

#define DCNET_INSTANTIATE_DECOUPLED(T)                                                   \
  template AngleDecomposition<T> decompose(const Tensor<T>&, const Tensor<T>&, bool);    \
  template struct DecoupledConvLayer<T>;                                                 \
  template DecoupledForward<T> decoupled_forward(DecoupledConvLayer<T>&, const Tensor<T>&, \
                                                 bool);                                  \
  template DecoupledGrads<T> decoupled_backward(const DecoupledConvLayer<T>&,            \
                                                const DecoupledCache<T>&, const Tensor<T>&, \
                                                GradRequest);                            \
  template std::pair<T, T> relu_decoupled_equivalence(const Tensor<T>&, const Tensor<T>&);

DCNET_INSTANTIATE_DECOUPLED(float)
DCNET_INSTANTIATE_DECOUPLED(double)

}  // namespace dcnet

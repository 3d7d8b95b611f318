#pragma once

// Forward and backward kernels for the dense ops the detector is built from.
// Every function here is a pure function of its arguments except the
// explicit accumulate-into outputs of the *_backward kernels.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

#include "rssd/tensor.hpp"

namespace rssd {

// ---------------------------------------------------------------------------
// Geometry

struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool operator==(const ConvGeometry&) const = default;
};

inline std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                 std::size_t pad, const char* axis = "h") {
  if (stride == 0) throw DimensionError(axis, "stride must be >= 1");
  if (in + 2 * pad < kernel) {
    throw DimensionError(axis, "kernel " + std::to_string(kernel) + " exceeds padded extent " +
                                   std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

inline std::size_t deconv_out_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t pad, const char* axis = "h") {
  if (stride == 0) throw DimensionError(axis, "stride must be >= 1");
  const long long out = static_cast<long long>(in - 1) * static_cast<long long>(stride) -
                        2 * static_cast<long long>(pad) + static_cast<long long>(kernel);
  if (out < 1) throw DimensionError(axis, "transposed convolution output is empty");
  return static_cast<std::size_t>(out);
}

struct PoolGeometry {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  bool ceil_mode = false;
  bool operator==(const PoolGeometry&) const = default;
};

// Ceil mode admits a final partial window as long as it starts inside the
// input.
inline std::size_t pool_out_size(std::size_t in, const PoolGeometry& g, const char* axis = "h") {
  if (g.stride == 0) throw DimensionError(axis, "stride must be >= 1");
  if (g.kernel > in) {
    throw DimensionError(axis, "pool kernel " + std::to_string(g.kernel) + " exceeds extent " +
                                   std::to_string(in));
  }
  const std::size_t span = in - g.kernel;
  std::size_t out = (g.ceil_mode ? (span + g.stride - 1) / g.stride : span / g.stride) + 1;
  if (g.ceil_mode && (out - 1) * g.stride >= in) --out;
  return out;
}

// Weights are (out_c, in_c, kh, kw) for convolution and (in_c, out_c, kh, kw)
// for transposed convolution, so that a deconvolution with weights W is the
// input-gradient map of a convolution with the same W.
template <typename T>
struct ConvParams {
  Tensor4<T> weights;
  std::vector<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// Non-owning counterpart of ConvParams. Kernels accept either.
template <typename T>
struct ConvView {
  const Tensor4<T>& weights;
  std::span<const T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

template <typename T>
struct BatchNormParams {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  static BatchNormParams identity(std::size_t channels) {
    BatchNormParams p;
    p.gamma.assign(channels, T(1));
    p.beta.assign(channels, T(0));
    p.running_mean.assign(channels, T(0));
    p.running_var.assign(channels, T(1));
    return p;
  }
  std::size_t channels() const { return gamma.size(); }
};

// Non-owning counterpart of BatchNormParams.
template <typename T>
struct BatchNormView {
  std::span<const T> gamma;
  std::span<const T> beta;
  std::span<T> running_mean;
  std::span<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);
  std::size_t channels() const { return gamma.size(); }
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// cols[(c*kh + u)*kw + v][i*wo + j] = img[c][i*s + u - p][j*s + v - p] (0 outside)
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* cols) {
  const long long H = static_cast<long long>(h), W = static_cast<long long>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = img + c * h * w;
    for (std::size_t u = 0; u < kh; ++u) {
      for (std::size_t v = 0; v < kw; ++v) {
        T* row = cols + ((c * kh + u) * kw + v) * ho * wo;
        for (std::size_t i = 0; i < ho; ++i) {
          const long long y = static_cast<long long>(i * stride + u) - static_cast<long long>(pad);
          T* dst = row + i * wo;
          if (y < 0 || y >= H) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + y * W;
          for (std::size_t j = 0; j < wo; ++j) {
            const long long x =
                static_cast<long long>(j * stride + v) - static_cast<long long>(pad);
            dst[j] = (x < 0 || x >= W) ? T(0) : src[x];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* img) {
  const long long H = static_cast<long long>(h), W = static_cast<long long>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = img + c * h * w;
    for (std::size_t u = 0; u < kh; ++u) {
      for (std::size_t v = 0; v < kw; ++v) {
        const T* row = cols + ((c * kh + u) * kw + v) * ho * wo;
        for (std::size_t i = 0; i < ho; ++i) {
          const long long y = static_cast<long long>(i * stride + u) - static_cast<long long>(pad);
          if (y < 0 || y >= H) continue;
          T* dst = plane + y * W;
          const T* src = row + i * wo;
          for (std::size_t j = 0; j < wo; ++j) {
            const long long x =
                static_cast<long long>(j * stride + v) - static_cast<long long>(pad);
            if (x >= 0 && x < W) dst[x] += src[j];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
  return kh == 1 && kw == 1 && stride == 1 && pad == 0;
}

template <typename P>
void check_bias(const P& p, std::size_t expected) {
  if (!p.bias.empty() && p.bias.size() != expected) {
    throw DimensionError("bias", "length " + std::to_string(p.bias.size()) + " != " +
                                     std::to_string(expected));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

template <typename P>
Shape4 conv2d_output_shape(const Shape4& x, const P& p) {
  const Shape4& ws = p.weights.shape();
  if (x.c != ws.c) {
    throw DimensionError("c", "input has " + std::to_string(x.c) + " channels, weights expect " +
                                  std::to_string(ws.c));
  }
  return {x.n, ws.n, conv_out_size(x.h, ws.h, p.stride, p.pad, "h"),
          conv_out_size(x.w, ws.w, p.stride, p.pad, "w")};
}

template <typename T, typename P>
Tensor4<T> conv2d(const Tensor4<T>& x, const P& p) {
  const Shape4 ys = conv2d_output_shape(x.shape(), p);
  detail::check_bias(p, ys.c);
  const Shape4& ws = p.weights.shape();
  const std::size_t k = ws.c * ws.h * ws.w, hw = ys.h * ys.w;
  Tensor4<T> y(ys);
  detail::ConstMatMap<T> wmat(p.weights.data().data(), ws.n, k);
  const bool pointwise = detail::is_pointwise(ws.h, ws.w, p.stride, p.pad);
  AlignedVector<T> cols(pointwise ? 0 : k * hw);
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* src = x.image(n).data();
    if (!pointwise) {
      detail::im2col(src, x.c(), x.h(), x.w(), ws.h, ws.w, p.stride, p.pad, ys.h, ys.w,
                     cols.data());
      src = cols.data();
    }
    detail::MatMap<T> out(y.image(n).data(), ys.c, hw);
    out.noalias() = wmat * detail::ConstMatMap<T>(src, k, hw);
    if (!p.bias.empty()) {
      out.colwise() += Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>>(p.bias.data(), ys.c);
    }
  }
  return y;
}

// Accumulates d/dx, d/dweights and d/dbias of <dy, conv2d(x, p)>. Any output
// pointer may be null.
template <typename T, typename P>
void conv2d_backward(const Tensor4<T>& x, const P& p, const Tensor4<T>& dy,
                     std::type_identity_t<Tensor4<T>>* dx,
                     std::type_identity_t<Tensor4<T>>* dweights,
                     std::span<std::type_identity_t<T>> dbias = {}) {
  const Shape4 ys = conv2d_output_shape(x.shape(), p);
  if (dy.shape() != ys) throw DimensionError("grad", "upstream " + dy.shape().str() + " != " + ys.str());
  const Shape4& ws = p.weights.shape();
  const std::size_t k = ws.c * ws.h * ws.w, hw = ys.h * ys.w;
  const bool pointwise = detail::is_pointwise(ws.h, ws.w, p.stride, p.pad);
  detail::ConstMatMap<T> wmat(p.weights.data().data(), ws.n, k);
  AlignedVector<T> cols(pointwise ? 0 : k * hw);
  AlignedVector<T> dcols(dx && !pointwise ? k * hw : 0);
  for (std::size_t n = 0; n < x.n(); ++n) {
    detail::ConstMatMap<T> g(dy.image(n).data(), ys.c, hw);
    if (dweights) {
      const T* src = x.image(n).data();
      if (!pointwise) {
        detail::im2col(src, x.c(), x.h(), x.w(), ws.h, ws.w, p.stride, p.pad, ys.h, ys.w,
                       cols.data());
        src = cols.data();
      }
      detail::MatMap<T>(dweights->data().data(), ws.n, k).noalias() +=
          g * detail::ConstMatMap<T>(src, k, hw).transpose();
    }
    if (!dbias.empty()) {
      for (std::size_t o = 0; o < ys.c; ++o) dbias[o] += g.row(o).sum();
    }
    if (dx) {
      if (pointwise) {
        detail::MatMap<T>(dx->image(n).data(), ws.c, hw).noalias() += wmat.transpose() * g;
      } else {
        detail::MatMap<T>(dcols.data(), k, hw).noalias() = wmat.transpose() * g;
        detail::col2im(dcols.data(), x.c(), x.h(), x.w(), ws.h, ws.w, p.stride, p.pad, ys.h,
                       ys.w, dx->image(n).data());
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Transposed convolution

template <typename P>
Shape4 deconv2d_output_shape(const Shape4& x, const P& p) {
  const Shape4& ws = p.weights.shape();
  if (x.c != ws.n) {
    throw DimensionError("c", "input has " + std::to_string(x.c) +
                                  " channels, transposed weights expect " + std::to_string(ws.n));
  }
  return {x.n, ws.c, deconv_out_size(x.h, ws.h, p.stride, p.pad, "h"),
          deconv_out_size(x.w, ws.w, p.stride, p.pad, "w")};
}

template <typename T, typename P>
Tensor4<T> deconv2d(const Tensor4<T>& x, const P& p) {
  const Shape4 ys = deconv2d_output_shape(x.shape(), p);
  detail::check_bias(p, ys.c);
  const Shape4& ws = p.weights.shape();
  const std::size_t k = ws.c * ws.h * ws.w, hw_in = x.h() * x.w();
  const bool pointwise = detail::is_pointwise(ws.h, ws.w, p.stride, p.pad);
  detail::ConstMatMap<T> wmat(p.weights.data().data(), ws.n, k);
  Tensor4<T> y(ys);
  AlignedVector<T> cols(pointwise ? 0 : k * hw_in);
  for (std::size_t n = 0; n < x.n(); ++n) {
    detail::ConstMatMap<T> in(x.image(n).data(), ws.n, hw_in);
    if (pointwise) {
      detail::MatMap<T>(y.image(n).data(), ys.c, hw_in).noalias() = wmat.transpose() * in;
    } else {
      detail::MatMap<T>(cols.data(), k, hw_in).noalias() = wmat.transpose() * in;
      detail::col2im(cols.data(), ys.c, ys.h, ys.w, ws.h, ws.w, p.stride, p.pad, x.h(), x.w(),
                     y.image(n).data());
    }
    if (!p.bias.empty()) {
      for (std::size_t c = 0; c < ys.c; ++c) {
        for (T& v : y.plane(n, c)) v += p.bias[c];
      }
    }
  }
  return y;
}

template <typename T, typename P>
void deconv2d_backward(const Tensor4<T>& x, const P& p, const Tensor4<T>& dy,
                       std::type_identity_t<Tensor4<T>>* dx,
                       std::type_identity_t<Tensor4<T>>* dweights,
                       std::span<std::type_identity_t<T>> dbias = {}) {
  const Shape4 ys = deconv2d_output_shape(x.shape(), p);
  if (dy.shape() != ys) throw DimensionError("grad", "upstream " + dy.shape().str() + " != " + ys.str());
  const Shape4& ws = p.weights.shape();
  const std::size_t k = ws.c * ws.h * ws.w, hw_in = x.h() * x.w();
  const bool pointwise = detail::is_pointwise(ws.h, ws.w, p.stride, p.pad);
  detail::ConstMatMap<T> wmat(p.weights.data().data(), ws.n, k);
  AlignedVector<T> cols(pointwise ? 0 : k * hw_in);
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* src = dy.image(n).data();
    if (!pointwise) {
      detail::im2col(src, ys.c, ys.h, ys.w, ws.h, ws.w, p.stride, p.pad, x.h(), x.w(),
                     cols.data());
      src = cols.data();
    }
    detail::ConstMatMap<T> gcols(src, k, hw_in);
    if (dx) detail::MatMap<T>(dx->image(n).data(), ws.n, hw_in).noalias() += wmat * gcols;
    if (dweights) {
      detail::MatMap<T>(dweights->data().data(), ws.n, k).noalias() +=
          detail::ConstMatMap<T>(x.image(n).data(), ws.n, hw_in) * gcols.transpose();
    }
    if (!dbias.empty()) {
      for (std::size_t c = 0; c < ys.c; ++c) {
        T acc = 0;
        for (T v : dy.plane(n, c)) acc += v;
        dbias[c] += acc;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Max pooling

template <typename T>
struct PoolResult {
  Tensor4<T> output;
  // Flat (h*w) index of the winning input element, per output element.
  std::vector<std::uint32_t> argmax;
};

inline Shape4 max_pool2d_output_shape(const Shape4& x, const PoolGeometry& g) {
  return {x.n, x.c, pool_out_size(x.h, g, "h"), pool_out_size(x.w, g, "w")};
}

template <typename T>
PoolResult<T> max_pool2d(const Tensor4<T>& x, const PoolGeometry& g) {
  const Shape4 ys = max_pool2d_output_shape(x.shape(), g);
  PoolResult<T> r{Tensor4<T>(ys), std::vector<std::uint32_t>(ys.size())};
  std::size_t o = 0;
  for (std::size_t n = 0; n < ys.n; ++n) {
    for (std::size_t c = 0; c < ys.c; ++c) {
      auto plane = x.plane(n, c);
      for (std::size_t i = 0; i < ys.h; ++i) {
        const std::size_t y0 = i * g.stride, y1 = std::min(y0 + g.kernel, x.h());
        for (std::size_t j = 0; j < ys.w; ++j, ++o) {
          const std::size_t x0 = j * g.stride, x1 = std::min(x0 + g.kernel, x.w());
          std::size_t best = y0 * x.w() + x0;
          for (std::size_t yy = y0; yy < y1; ++yy) {
            for (std::size_t xx = x0; xx < x1; ++xx) {
              if (plane[yy * x.w() + xx] > plane[best]) best = yy * x.w() + xx;
            }
          }
          r.output[o] = plane[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return r;
}

// Routes each upstream gradient element to its recorded argmax.
template <typename T>
void max_pool2d_backward(const PoolResult<T>& fwd, const Tensor4<T>& dy, Tensor4<T>& dx) {
  if (dy.shape() != fwd.output.shape()) {
    throw DimensionError("grad", "upstream " + dy.shape().str() + " != " + fwd.output.shape().str());
  }
  const Shape4& ys = dy.shape();
  std::size_t o = 0;
  for (std::size_t n = 0; n < ys.n; ++n) {
    for (std::size_t c = 0; c < ys.c; ++c) {
      auto plane = dx.plane(n, c);
      for (std::size_t k = 0; k < ys.plane(); ++k, ++o) plane[fwd.argmax[o]] += dy[o];
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
struct BatchStats {
  std::vector<T> mean;
  std::vector<T> var;  // biased (divides by count)
  std::size_t count = 0;
};

// Two-pass per-channel statistics over (n, h, w).
template <typename T>
BatchStats<T> batch_statistics(const Tensor4<T>& x) {
  if (x.empty()) throw DimensionError("n*h*w", "batch statistics of an empty tensor");
  BatchStats<T> s{std::vector<T>(x.c(), T(0)), std::vector<T>(x.c(), T(0)), x.n() * x.h() * x.w()};
  for (std::size_t c = 0; c < x.c(); ++c) {
    T sum = 0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      for (T v : x.plane(n, c)) sum += v;
    }
    const T mean = sum / static_cast<T>(s.count);
    T sq = 0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      for (T v : x.plane(n, c)) sq += (v - mean) * (v - mean);
    }
    s.mean[c] = mean;
    s.var[c] = sq / static_cast<T>(s.count);
  }
  return s;
}

template <typename T>
struct BatchNormCache {
  Tensor4<T> xhat;
  std::vector<T> inv_std;
  bool training = false;
};

namespace detail {

template <typename T, typename P>
void check_bn(const Tensor4<T>& x, const P& p) {
  if (x.empty()) throw DimensionError("n*h*w", "batch norm over an empty tensor");
  const std::size_t c = x.c();
  if (p.gamma.size() != c || p.beta.size() != c || p.running_mean.size() != c ||
      p.running_var.size() != c) {
    throw DimensionError("c", "batch norm parameters sized " + std::to_string(p.gamma.size()) +
                                  " for " + std::to_string(c) + " channels");
  }
}

template <typename T>
T inverse_std(T var, T eps) {
  const T denom = var + eps;
  // Zero variance with zero eps: the centered input is identically zero.
  return denom > T(0) ? T(1) / std::sqrt(denom) : T(0);
}

}  // namespace detail

// Normalizes with batch statistics (training) or running statistics
// (inference). Running statistics are not touched; see update_running_stats.
template <typename T, typename P>
Tensor4<T> batch_norm_forward(const Tensor4<T>& x, const P& p, bool training,
                              std::type_identity_t<BatchNormCache<T>>* cache = nullptr,
                              const std::type_identity_t<BatchStats<T>>* precomputed = nullptr) {
  detail::check_bn(x, p);
  BatchStats<T> local;
  std::span<const T> mean(p.running_mean.data(), p.running_mean.size());
  std::span<const T> var(p.running_var.data(), p.running_var.size());
  if (training) {
    if (!precomputed) local = batch_statistics(x);
    const BatchStats<T>& s = precomputed ? *precomputed : local;
    mean = s.mean;
    var = s.var;
  }
  Tensor4<T> y(x.shape());
  std::vector<T> inv(x.c());
  Tensor4<T> xhat = cache ? Tensor4<T>(x.shape()) : Tensor4<T>();
  for (std::size_t c = 0; c < x.c(); ++c) {
    inv[c] = detail::inverse_std(var[c], T(p.eps));
    const T m = mean[c], g = p.gamma[c], b = p.beta[c];
    for (std::size_t n = 0; n < x.n(); ++n) {
      auto src = x.plane(n, c);
      auto dst = y.plane(n, c);
      for (std::size_t k = 0; k < src.size(); ++k) {
        const T h = (src[k] - m) * inv[c];
        if (cache) xhat.plane(n, c)[k] = h;
        dst[k] = g * h + b;
      }
    }
  }
  if (cache) *cache = {std::move(xhat), std::move(inv), training};
  return y;
}

// running <- (1 - momentum) * running + momentum * batch, with the unbiased
// batch variance.
template <typename T, typename P>
void update_running_stats(P& p, const BatchStats<T>& s) {
  const T unbias = s.count > 1 ? static_cast<T>(s.count) / static_cast<T>(s.count - 1) : T(1);
  for (std::size_t c = 0; c < p.channels(); ++c) {
    p.running_mean[c] = (T(1) - p.momentum) * p.running_mean[c] + p.momentum * s.mean[c];
    p.running_var[c] = (T(1) - p.momentum) * p.running_var[c] + p.momentum * s.var[c] * unbias;
  }
}

template <typename T, typename P>
Tensor4<T> batch_norm(const Tensor4<T>& x, P& p, bool training) {
  if (!training) return batch_norm_forward(x, p, false);
  detail::check_bn(x, p);
  const BatchStats<T> s = batch_statistics(x);
  Tensor4<T> y = batch_norm_forward(x, p, true, nullptr, &s);
  update_running_stats(p, s);
  return y;
}

template <typename T>
void batch_norm_backward(const BatchNormCache<T>& cache,
                         std::span<const std::type_identity_t<T>> gamma, const Tensor4<T>& dy,
                         std::type_identity_t<Tensor4<T>>* dx,
                         std::span<std::type_identity_t<T>> dgamma = {},
                         std::span<std::type_identity_t<T>> dbeta = {}) {
  const Tensor4<T>& xhat = cache.xhat;
  if (dy.shape() != xhat.shape()) {
    throw DimensionError("grad", "upstream " + dy.shape().str() + " != " + xhat.shape().str());
  }
  const T count = static_cast<T>(xhat.n() * xhat.h() * xhat.w());
  for (std::size_t c = 0; c < xhat.c(); ++c) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < xhat.n(); ++n) {
      auto g = dy.plane(n, c);
      auto h = xhat.plane(n, c);
      for (std::size_t k = 0; k < g.size(); ++k) {
        sum_dy += g[k];
        sum_dy_xhat += g[k] * h[k];
      }
    }
    if (!dgamma.empty()) dgamma[c] += sum_dy_xhat;
    if (!dbeta.empty()) dbeta[c] += sum_dy;
    if (!dx) continue;
    const T scale = gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < xhat.n(); ++n) {
      auto g = dy.plane(n, c);
      auto h = xhat.plane(n, c);
      auto out = dx->plane(n, c);
      for (std::size_t k = 0; k < g.size(); ++k) {
        out[k] += cache.training ? scale * (g[k] - sum_dy / count - h[k] * sum_dy_xhat / count)
                                 : scale * g[k];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <typename T>
Shape4 concat_output_shape(std::span<const Tensor4<T>* const> xs) {
  if (xs.empty()) throw DimensionError("inputs", "concatenation of zero tensors");
  Shape4 s = xs[0]->shape();
  s.c = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Shape4& si = xs[i]->shape();
    if (si.n != s.n || si.h != s.h || si.w != s.w) {
      throw DimensionError("level " + std::to_string(i),
                           "input " + si.str() + " does not match n/h/w of " +
                               xs[0]->shape().str());
    }
    s.c += si.c;
  }
  return s;
}

template <typename T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>* const> xs) {
  const Shape4 s = concat_output_shape<T>(xs);
  Tensor4<T> y(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    T* dst = y.image(n).data();
    for (const Tensor4<T>* x : xs) {
      auto src = x->image(n);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return y;
}

template <typename T>
Tensor4<T> concat_channels(const std::vector<Tensor4<T>>& xs) {
  std::vector<const Tensor4<T>*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  return concat_channels<T>(std::span<const Tensor4<T>* const>(ptrs));
}

template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > x.c()) {
    throw DimensionError("c", "slice [" + std::to_string(begin) + ", " +
                                  std::to_string(begin + count) + ") of " + std::to_string(x.c()) +
                                  " channels");
  }
  Tensor4<T> y(x.n(), count, x.h(), x.w());
  for (std::size_t n = 0; n < x.n(); ++n) {
    auto src = x.image(n).subspan(begin * x.h() * x.w(), count * x.h() * x.w());
    std::copy(src.begin(), src.end(), y.image(n).begin());
  }
  return y;
}

// Adds x into channels [begin, begin + x.c) of dst.
template <typename T>
void add_into_channels(Tensor4<T>& dst, std::size_t begin, const Tensor4<T>& x) {
  for (std::size_t n = 0; n < x.n(); ++n) {
    auto src = x.image(n);
    auto out = dst.image(n).subspan(begin * x.h() * x.w(), src.size());
    for (std::size_t k = 0; k < src.size(); ++k) out[k] += src[k];
  }
}

// ---------------------------------------------------------------------------
// Pointwise

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (T& v : y.data()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
void relu_backward(const Tensor4<T>& y, const Tensor4<T>& dy, Tensor4<T>& dx) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > T(0)) dx[i] += dy[i];
  }
}

}  // namespace rssd

#pragma once

// Differentiable wrappers that run a kernel and record it on a GradTape.

#include <memory>
#include <span>
#include <vector>

#include "rssd/kernels.hpp"
#include "rssd/tape.hpp"

namespace rssd::ops {

namespace detail {

template <typename T>
std::span<const T> flat(const GradTape<T>& tape, TensorId id) {
  if (!id.valid()) return {};
  return tape.value(id).data();
}

template <typename T>
std::span<T> flat_grad(GradAccumulator<T>& acc, TensorId id) {
  Tensor4<T>* g = acc.grad(id);
  return g ? g->data() : std::span<T>{};
}

}  // namespace detail

// `bias` may be an invalid id for a bias-free convolution.
template <typename T>
TensorId conv2d(GradTape<T>& tape, TensorId x, TensorId weights, TensorId bias,
                std::size_t stride, std::size_t pad) {
  auto view = [&tape, x, weights, bias, stride, pad]() {
    return ConvView<T>{tape.value(weights), detail::flat(tape, bias), stride, pad};
  };
  Tensor4<T> y = rssd::conv2d(tape.value(x), view());
  return tape.record(
      std::move(y), {x, weights, bias},
      [&tape, x, weights, bias, view](const Tensor4<T>& g, GradAccumulator<T>& acc) {
        conv2d_backward(tape.value(x), view(), g, acc.grad(x), acc.grad(weights),
                        detail::flat_grad(acc, bias));
      },
      [&tape, x, view]() { return rssd::conv2d(tape.value(x), view()); });
}

template <typename T>
TensorId deconv2d(GradTape<T>& tape, TensorId x, TensorId weights, TensorId bias,
                  std::size_t stride, std::size_t pad) {
  auto view = [&tape, x, weights, bias, stride, pad]() {
    return ConvView<T>{tape.value(weights), detail::flat(tape, bias), stride, pad};
  };
  Tensor4<T> y = rssd::deconv2d(tape.value(x), view());
  return tape.record(
      std::move(y), {x, weights, bias},
      [&tape, x, weights, bias, view](const Tensor4<T>& g, GradAccumulator<T>& acc) {
        deconv2d_backward(tape.value(x), view(), g, acc.grad(x), acc.grad(weights),
                          detail::flat_grad(acc, bias));
      },
      [&tape, x, view]() { return rssd::deconv2d(tape.value(x), view()); });
}

template <typename T>
TensorId max_pool2d(GradTape<T>& tape, TensorId x, PoolGeometry geometry) {
  auto result = std::make_shared<PoolResult<T>>(rssd::max_pool2d(tape.value(x), geometry));
  Tensor4<T> y = result->output;
  return tape.record(
      std::move(y), {x},
      [x, result](const Tensor4<T>& g, GradAccumulator<T>& acc) {
        if (Tensor4<T>* dx = acc.grad(x)) max_pool2d_backward(*result, g, *dx);
      },
      [&tape, x, geometry]() { return rssd::max_pool2d(tape.value(x), geometry).output; });
}

// Running statistics live in `running_mean`/`running_var` (model buffers);
// training mode updates them once, at record time.
template <typename T>
TensorId batch_norm(GradTape<T>& tape, TensorId x, TensorId gamma, TensorId beta,
                    std::span<T> running_mean, std::span<T> running_var, bool training,
                    T eps = T(1e-5), T momentum = T(0.1)) {
  const Tensor4<T>& xv = tape.value(x);
  BatchNormView<T> view{detail::flat(tape, gamma), detail::flat(tape, beta), running_mean,
                        running_var, eps, momentum};
  auto cache = std::make_shared<BatchNormCache<T>>();
  std::optional<BatchStats<T>> stats;
  if (training) stats = batch_statistics(xv);
  Tensor4<T> y = batch_norm_forward(xv, view, training, cache.get(), stats ? &*stats : nullptr);
  // Replay must see the statistics used at record time.
  auto mean = std::make_shared<std::vector<T>>(
      training ? stats->mean : std::vector<T>(running_mean.begin(), running_mean.end()));
  auto var = std::make_shared<std::vector<T>>(
      training ? stats->var : std::vector<T>(running_var.begin(), running_var.end()));
  if (training) update_running_stats(view, *stats);
  return tape.record(
      std::move(y), {x, gamma, beta},
      [&tape, x, gamma, beta, cache](const Tensor4<T>& g, GradAccumulator<T>& acc) {
        batch_norm_backward<T>(*cache, detail::flat(tape, gamma), g, acc.grad(x),
                               detail::flat_grad(acc, gamma), detail::flat_grad(acc, beta));
      },
      [&tape, x, gamma, beta, mean, var, eps]() {
        BatchNormView<T> v{detail::flat(tape, gamma), detail::flat(tape, beta),
                           std::span<T>(*mean), std::span<T>(*var), eps, T(0)};
        return batch_norm_forward(tape.value(x), v, false);
      });
}

template <typename T>
TensorId concat_channels(GradTape<T>& tape, const std::vector<TensorId>& xs) {
  auto gather = [&tape, xs]() {
    std::vector<const Tensor4<T>*> ptrs;
    ptrs.reserve(xs.size());
    for (TensorId id : xs) ptrs.push_back(&tape.value(id));
    return rssd::concat_channels<T>(std::span<const Tensor4<T>* const>(ptrs));
  };
  Tensor4<T> y = gather();
  return tape.record(
      std::move(y), xs,
      [&tape, xs](const Tensor4<T>& g, GradAccumulator<T>& acc) {
        std::size_t begin = 0;
        for (TensorId id : xs) {
          const std::size_t c = tape.value(id).c();
          if (Tensor4<T>* dx = acc.grad(id)) {
            for (std::size_t n = 0; n < g.n(); ++n) {
              auto src = g.image(n).subspan(begin * g.h() * g.w(), c * g.h() * g.w());
              auto dst = dx->image(n);
              for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
            }
          }
          begin += c;
        }
      },
      gather);
}

template <typename T>
TensorId relu(GradTape<T>& tape, TensorId x) {
  Tensor4<T> y = rssd::relu(tape.value(x));
  return tape.record(
      std::move(y), {x},
      [&tape, x](const Tensor4<T>& g, GradAccumulator<T>& acc) {
        if (Tensor4<T>* dx = acc.grad(x)) {
          const Tensor4<T>& in = tape.value(x);
          for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i] > T(0)) (*dx)[i] += g[i];
          }
        }
      },
      [&tape, x]() { return rssd::relu(tape.value(x)); });
}

}  // namespace rssd::ops

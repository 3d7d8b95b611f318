#pragma once

// Parameterized building blocks over ParamStore entries.

#include <cmath>
#include <random>
#include <string>

#include "rssd/ops.hpp"
#include "rssd/params.hpp"

namespace rssd {

template <typename T>
struct ConvLayer {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;  // optional
  ConvGeometry geometry;
  bool transposed = false;

  TensorId forward(GradTape<T>& tape, TensorId x) const {
    const TensorId w = tape.parameter(*weight);
    const TensorId b = bias ? tape.parameter(*bias) : TensorId{};
    return transposed ? ops::deconv2d(tape, x, w, b, geometry.stride, geometry.pad)
                      : ops::conv2d(tape, x, w, b, geometry.stride, geometry.pad);
  }

  // He-normal initialized convolution with weights (out, in, k, k).
  static ConvLayer make(ParamStore<T>& store, const std::string& name, std::size_t in,
                        std::size_t out, ConvGeometry g, bool with_bias, std::mt19937_64& rng) {
    Tensor4<T> w(out, in, g.kernel, g.kernel);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(in * g.kernel * g.kernel)));
    for (T& v : w.data()) v = static_cast<T>(dist(rng));
    ConvLayer layer;
    layer.weight = &store.add(name + ".weight", std::move(w));
    if (with_bias) layer.bias = &store.add(name + ".bias", Tensor4<T>(1, out, 1, 1));
    layer.geometry = g;
    return layer;
  }

  // Channel-preserving transposed convolution with weights (c, c, k, k)
  // initialized to per-channel bilinear interpolation.
  static ConvLayer make_upsample(ParamStore<T>& store, const std::string& name,
                                 std::size_t channels, ConvGeometry g) {
    Tensor4<T> w(channels, channels, g.kernel, g.kernel);
    const double factor = double((g.kernel + 1) / 2);
    const double center = g.kernel % 2 == 1 ? factor - 1 : factor - 0.5;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t u = 0; u < g.kernel; ++u) {
        for (std::size_t v = 0; v < g.kernel; ++v) {
          w(c, c, u, v) = static_cast<T>((1 - std::abs(double(u) - center) / factor) *
                                         (1 - std::abs(double(v) - center) / factor));
        }
      }
    }
    ConvLayer layer;
    layer.weight = &store.add(name + ".weight", std::move(w));
    layer.bias = &store.add(name + ".bias", Tensor4<T>(1, channels, 1, 1));
    layer.geometry = g;
    layer.transposed = true;
    return layer;
  }
};

template <typename T>
struct BatchNormLayer {
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  Parameter<T>* running_mean = nullptr;
  Parameter<T>* running_var = nullptr;

  TensorId forward(GradTape<T>& tape, TensorId x, bool training) const {
    return ops::batch_norm<T>(tape, x, tape.parameter(*gamma), tape.parameter(*beta),
                              running_mean->value.data(), running_var->value.data(), training,
                              T(kEps), T(kMomentum));
  }

  static BatchNormLayer make(ParamStore<T>& store, const std::string& name, std::size_t channels) {
    BatchNormLayer layer;
    layer.gamma = &store.add(name + ".gamma", Tensor4<T>(1, channels, 1, 1, T(1)));
    layer.beta = &store.add(name + ".beta", Tensor4<T>(1, channels, 1, 1));
    layer.running_mean = &store.add(name + ".running_mean", Tensor4<T>(1, channels, 1, 1), false);
    layer.running_var =
        &store.add(name + ".running_var", Tensor4<T>(1, channels, 1, 1, T(1)), false);
    return layer;
  }
};

// conv -> batch norm -> relu
template <typename T>
struct ConvBnRelu {
  ConvLayer<T> conv;
  BatchNormLayer<T> bn;

  TensorId forward(GradTape<T>& tape, TensorId x, bool training) const {
    return ops::relu(tape, bn.forward(tape, conv.forward(tape, x), training));
  }

  static ConvBnRelu make(ParamStore<T>& store, const std::string& name, std::size_t in,
                         std::size_t out, ConvGeometry g, std::mt19937_64& rng) {
    return {ConvLayer<T>::make(store, name + ".conv", in, out, g, false, rng),
            BatchNormLayer<T>::make(store, name + ".bn", out)};
  }
};

}  // namespace rssd

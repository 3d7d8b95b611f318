#pragma once

// Classifier networks: one 3x3 convolution per level emitting k*(C+4)
// channels per position, or a single weight set shared by every level.

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rssd/boxes.hpp"
#include "rssd/layers.hpp"
#include "rssd/pyramid.hpp"

namespace rssd {

namespace ops {

// Gathers per-level head maps (N, k_l*D, f_l, f_l) into (N, 1, A, D) in
// frozen anchor order: level, row, column, box. Channel b*D + t of a head
// map is entry t of box b.
template <typename T>
TensorId flatten_heads(GradTape<T>& tape, const std::vector<TensorId>& maps,
                       const std::vector<std::size_t>& boxes_per_position, std::size_t D) {
  if (maps.size() != boxes_per_position.size()) {
    throw DimensionError("levels", std::to_string(maps.size()) + " head maps for " +
                                       std::to_string(boxes_per_position.size()) + " levels");
  }
  std::size_t A = 0, N = 0;
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const Shape4 s = tape.value(maps[l]).shape();
    if (s.c != boxes_per_position[l] * D) {
      throw DimensionError("c", "level " + std::to_string(l) + " head has " + std::to_string(s.c) +
                                    " channels, expected " +
                                    std::to_string(boxes_per_position[l] * D));
    }
    if (l == 0) N = s.n;
    if (s.n != N) throw DimensionError("n", "head maps disagree on batch size");
    A += s.h * s.w * boxes_per_position[l];
  }
  // visit(level value, flat index inside level map, flat index inside output)
  auto walk = [&tape, maps, boxes_per_position, D, A](auto&& visit) {
    std::size_t base = 0;
    for (std::size_t l = 0; l < maps.size(); ++l) {
      const Shape4 s = tape.value(maps[l]).shape();
      const std::size_t k = boxes_per_position[l], hw = s.h * s.w;
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t p = 0; p < hw; ++p) {
          for (std::size_t b = 0; b < k; ++b) {
            const std::size_t a = base + p * k + b;
            for (std::size_t t = 0; t < D; ++t) {
              visit(l, ((n * s.c) + b * D + t) * hw + p, (n * A + a) * D + t);
            }
          }
        }
      }
      base += hw * k;
    }
  };
  auto gather = [&tape, maps, walk, N, A, D]() {
    Tensor4<T> out(N, 1, A, D);
    walk([&](std::size_t l, std::size_t src, std::size_t dst) { out[dst] = tape.value(maps[l])[src]; });
    return out;
  };
  return tape.record(
      gather(), maps,
      [maps, walk](const Tensor4<T>& g, GradAccumulator<T>& acc) {
        std::vector<Tensor4<T>*> grads;
        for (TensorId id : maps) grads.push_back(acc.grad(id));
        walk([&](std::size_t l, std::size_t src, std::size_t dst) {
          if (grads[l]) (*grads[l])[src] += g[dst];
        });
      },
      gather);
}

}  // namespace ops

template <typename T>
class ClassifierHeads {
 public:
  // `channels`: fused channel count per level; `num_classes` includes
  // background.
  ClassifierHeads(const std::vector<std::size_t>& channels, const BoxLayout& layout,
                  std::size_t num_classes, ParamStore<T>& store, std::mt19937_64& rng)
      : layout_(layout), num_classes_(num_classes) {
    layout.validate(channels.size());
    if (num_classes < 2) throw ConfigError("num_classes must count background plus at least one class");
    const std::size_t D = entry_size();
    if (layout.shared_classifier) {
      for (std::size_t c : channels) {
        if (c != channels.front()) {
          throw ConfigError(
              "a shared classifier needs one channel count on every level; only rainbow "
              "fusion provides that");
        }
      }
      layers_.push_back(make_layer(store, "head.shared", channels.front(),
                                   layout.boxes_per_position.front() * D, rng));
    } else {
      for (std::size_t l = 0; l < channels.size(); ++l) {
        layers_.push_back(make_layer(store, "head.level" + std::to_string(l), channels[l],
                                     layout.boxes_per_position[l] * D, rng));
      }
    }
    channels_ = channels;
  }

  std::size_t entry_size() const { return num_classes_ + 4; }
  std::size_t num_classes() const { return num_classes_; }
  const BoxLayout& layout() const { return layout_; }
  bool shared() const { return layout_.shared_classifier; }
  bool tied() const { return tied_; }

  // Distinct classifier weight tensors.
  std::vector<const Parameter<T>*> weight_tensors() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& l : layers_) out.push_back(l.weight);
    return out;
  }

  // Early phase of the shared-then-separate schedule: per-level heads all
  // run level 0's weights until untie() copies them out.
  void tie() {
    if (shared()) return;
    if (!layout_.uniform() || std::adjacent_find(channels_.begin(), channels_.end(),
                                                 std::not_equal_to<>()) != channels_.end()) {
      throw ConfigError("tying per-level heads needs uniform boxes and channels (rainbow fusion)");
    }
    tied_ = true;
  }
  void untie() {
    if (!tied_) return;
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      layers_[l].weight->value = layers_[0].weight->value;
      layers_[l].bias->value = layers_[0].bias->value;
    }
    tied_ = false;
  }

  const ConvLayer<T>& layer_for(std::size_t level) const {
    return shared() || tied_ ? layers_.front() : layers_.at(level);
  }

  std::vector<TensorId> forward_levels(GradTape<T>& tape, const std::vector<TensorId>& levels) const {
    std::vector<TensorId> maps;
    for (std::size_t l = 0; l < levels.size(); ++l) maps.push_back(layer_for(l).forward(tape, levels[l]));
    return maps;
  }

  // (N, 1, A, C+4)
  TensorId forward(GradTape<T>& tape, const std::vector<TensorId>& levels) const {
    return ops::flatten_heads(tape, forward_levels(tape, levels), layout_.boxes_per_position,
                              entry_size());
  }

 private:
  static ConvLayer<T> make_layer(ParamStore<T>& store, const std::string& name, std::size_t in,
                                 std::size_t out, std::mt19937_64& rng) {
    auto layer = ConvLayer<T>::make(store, name, in, out, {3, 1, 1}, true, rng);
    // unit-variance outputs for unit-variance inputs
    for (T& w : layer.weight->value.data()) w = static_cast<T>(w / std::sqrt(2.0));
    return layer;
  }

  BoxLayout layout_;
  std::size_t num_classes_;
  std::vector<std::size_t> channels_;
  std::vector<ConvLayer<T>> layers_;
  bool tied_ = false;
};

}  // namespace rssd

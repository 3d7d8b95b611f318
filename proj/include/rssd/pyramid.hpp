#pragma once

// Backbone feature pyramid and the four ways of feeding it to the
// classifiers: independent levels, pooled cascade, deconvolved cascade and
// rainbow concatenation.

#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rssd/error.hpp"
#include "rssd/layers.hpp"

namespace rssd {

enum class FusionMode { Conventional, PoolConcat, DeconvConcat, Rainbow };

inline constexpr FusionMode kAllFusionModes[] = {FusionMode::Conventional, FusionMode::PoolConcat,
                                                 FusionMode::DeconvConcat, FusionMode::Rainbow};

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Conventional: return "conventional";
    case FusionMode::PoolConcat: return "pool";
    case FusionMode::DeconvConcat: return "deconv";
    case FusionMode::Rainbow: return "rainbow";
  }
  return "?";
}

inline FusionMode parse_fusion_mode(const std::string& s) {
  for (FusionMode m : kAllFusionModes) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown fusion mode '" + s + "' (expected conventional|pool|deconv|rainbow)");
}

struct Rational {
  std::size_t num = 1;
  std::size_t den = 1;

  std::size_t apply(std::size_t channels) const {
    if (den == 0 || num == 0) throw ConfigError("channel_scale must be a positive rational");
    if ((channels * num) % den != 0) {
      throw ConfigError("channel_scale " + str() + " does not divide " + std::to_string(channels) +
                        " channels evenly");
    }
    return channels * num / den;
  }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  bool operator==(const Rational&) const = default;
};

struct LevelSpec {
  std::size_t spatial = 1;
  std::size_t channels = 1;  // before channel_scale
  bool operator==(const LevelSpec&) const = default;
};

// Replaces the intermediate and output channel counts of one level block
// (before channel_scale), as in the increased-channel variant.
struct ChannelOverride {
  std::size_t level = 0;
  std::size_t mid = 0;
  std::size_t out = 0;
  bool operator==(const ChannelOverride&) const = default;
};

struct PyramidConfig {
  std::size_t input_size = 300;
  std::size_t image_channels = 3;
  std::vector<LevelSpec> levels;
  // Stride-2 3x3 convolutions ahead of the first level; not scaled.
  std::vector<std::size_t> stem_channels;
  Rational channel_scale{};
  std::vector<ChannelOverride> issd_channels;

  // 300x300 input, level ladder 38/19/10/5/3/1 with 512/1024/512/256/256/256.
  static PyramidConfig canonical300() {
    PyramidConfig c;
    c.input_size = 300;
    c.levels = {{38, 512}, {19, 1024}, {10, 512}, {5, 256}, {3, 256}, {1, 256}};
    c.stem_channels = {64, 128};
    return c;
  }

  // Increased-channel variant of the canonical ladder.
  static PyramidConfig canonical300_issd() {
    PyramidConfig c = canonical300();
    c.issd_channels = {{0, 512, 2048}, {1, 1024, 2048}, {2, 1024, 2048},
                       {3, 1024, 2048}, {4, 1024, 2048}, {5, 1024, 2048}};
    return c;
  }

  // Desk-scale ladder: 96x96 input, 12/6/3/2/1, channels scaled by 1/16.
  static PyramidConfig toy96() {
    PyramidConfig c;
    c.input_size = 96;
    c.levels = {{12, 512}, {6, 1024}, {3, 512}, {2, 256}, {1, 256}};
    c.stem_channels = {16, 32};
    c.channel_scale = {1, 16};
    return c;
  }

  std::size_t num_levels() const { return levels.size(); }

  const ChannelOverride* override_for(std::size_t level) const {
    for (const auto& o : issd_channels) {
      if (o.level == level) return &o;
    }
    return nullptr;
  }

  std::size_t level_channels(std::size_t level) const {
    const ChannelOverride* o = override_for(level);
    return channel_scale.apply(o ? o->out : levels.at(level).channels);
  }

  std::size_t mid_channels(std::size_t level) const {
    const ChannelOverride* o = override_for(level);
    return o ? channel_scale.apply(o->mid) : std::max<std::size_t>(1, level_channels(level) / 2);
  }

  std::vector<std::size_t> channels() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < levels.size(); ++i) out.push_back(level_channels(i));
    return out;
  }

  std::vector<std::size_t> spatial_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& l : levels) out.push_back(l.spatial);
    return out;
  }

  void validate() const {
    if (levels.empty()) throw ConfigError("pyramid needs at least one level");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i].spatial == 0 || levels[i].channels == 0) {
        throw ConfigError("level " + std::to_string(i) + " has a zero extent");
      }
      if (i > 0 && levels[i].spatial >= levels[i - 1].spatial) {
        throw ConfigError("level sizes must be strictly decreasing (level " + std::to_string(i) +
                          ")");
      }
      level_channels(i);
      mid_channels(i);
    }
    for (const auto& o : issd_channels) {
      if (o.level >= levels.size()) {
        throw ConfigError("issd override for missing level " + std::to_string(o.level));
      }
    }
  }

  bool operator==(const PyramidConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Stage plans between adjacent ladder sizes

// Backbone convolution from `from` to `to` pixels.
inline std::optional<ConvGeometry> try_plan_backbone_step(std::size_t from, std::size_t to) {
  if (from == to) return ConvGeometry{3, 1, 1};
  if (from >= 1 && (from - 1) / 2 + 1 == to) return ConvGeometry{3, 2, 1};
  if (to < from) return ConvGeometry{from - to + 1, 1, 0};
  return std::nullopt;
}

// Max-pool from a larger level to the next smaller one. Windows always cover
// the whole input.
inline PoolGeometry plan_pool_step(std::size_t from, std::size_t to) {
  if (from % 2 == 0 && from / 2 == to) return {2, 2, false};
  if (from % 2 == 1 && from >= 3 && (from - 2 + 1) / 2 + 1 == to) return {2, 2, true};
  if (to < from) return {from - to + 1, 1, false};
  throw ConfigError("no pooling stage maps " + std::to_string(from) + " to " + std::to_string(to));
}

// Transposed convolution from a smaller level up to the next larger one.
inline ConvGeometry plan_deconv_step(std::size_t from, std::size_t to) {
  if (to == 2 * from) return {2, 2, 0};
  if (from >= 2 && to == 2 * from - 1) return {3, 2, 1};
  if (to > from) return {to - from + 1, 1, 0};
  throw ConfigError("no deconvolution stage maps " + std::to_string(from) + " to " +
                    std::to_string(to));
}

// ---------------------------------------------------------------------------
// Shape table

struct LevelShape {
  std::size_t level = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  bool operator==(const LevelShape&) const = default;
};

// Fused channel counts for a given base channel list.
inline std::vector<std::size_t> fused_channels(const std::vector<std::size_t>& base,
                                               FusionMode mode) {
  std::vector<std::size_t> out(base.size());
  switch (mode) {
    case FusionMode::Conventional:
      out = base;
      break;
    case FusionMode::PoolConcat:
      std::partial_sum(base.begin(), base.end(), out.begin());
      break;
    case FusionMode::DeconvConcat:
      std::partial_sum(base.rbegin(), base.rend(), out.rbegin());
      break;
    case FusionMode::Rainbow:
      std::fill(out.begin(), out.end(), std::accumulate(base.begin(), base.end(), std::size_t{0}));
      break;
  }
  return out;
}

// Pure shape computation; allocates no tensors.
inline std::vector<LevelShape> pyramid_shape_table(const PyramidConfig& cfg, FusionMode mode) {
  cfg.validate();
  const auto c = fused_channels(cfg.channels(), mode);
  std::vector<LevelShape> rows;
  for (std::size_t i = 0; i < cfg.num_levels(); ++i) {
    rows.push_back({i, cfg.levels[i].spatial, cfg.levels[i].spatial, c[i]});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Backbone

// Plain stack: stem of stride-2 convolutions, then per level a 1x1 reduce
// and a planned 3x3 (or ladder-closing) convolution, each followed by batch
// norm and ReLU.
template <typename T>
class Backbone {
 public:
  Backbone(const PyramidConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng) {
    cfg.validate();
    std::size_t size = cfg.input_size, channels = cfg.image_channels;
    std::vector<std::size_t> computed;
    for (std::size_t s = 0; s < cfg.stem_channels.size(); ++s) {
      if (size < 2) throw ConfigError(stride_plan_message(cfg, "stem reaches size 1 early"));
      stem_.push_back(ConvBnRelu<T>::make(store, "backbone.stem" + std::to_string(s), channels,
                                          cfg.stem_channels[s], {3, 2, 1}, rng));
      size = conv_out_size(size, 3, 2, 1);
      channels = cfg.stem_channels[s];
    }
    for (std::size_t i = 0; i < cfg.num_levels(); ++i) {
      const std::size_t target = cfg.levels[i].spatial;
      const auto g = try_plan_backbone_step(size, target);
      if (!g) {
        throw ConfigError(stride_plan_message(
            cfg, "level " + std::to_string(i) + " cannot reach " + std::to_string(target) +
                     " from " + std::to_string(size)));
      }
      const std::string name = "backbone.level" + std::to_string(i);
      const std::size_t mid = cfg.mid_channels(i), out = cfg.level_channels(i);
      levels_.push_back({ConvBnRelu<T>::make(store, name + ".reduce", channels, mid, {1, 1, 0}, rng),
                         ConvBnRelu<T>::make(store, name + ".out", mid, out, *g, rng)});
      size = target;
      channels = out;
    }
  }

  std::vector<TensorId> forward(GradTape<T>& tape, TensorId images, bool training) const {
    TensorId x = images;
    for (const auto& block : stem_) x = block.forward(tape, x, training);
    std::vector<TensorId> pyramid;
    for (const auto& [reduce, out] : levels_) {
      x = out.forward(tape, reduce.forward(tape, x, training), training);
      pyramid.push_back(x);
    }
    return pyramid;
  }

 private:
  static std::string stride_plan_message(const PyramidConfig& cfg, const std::string& reason) {
    std::ostringstream os;
    os << "inconsistent stride plan for input " << cfg.input_size << ": " << reason
       << "; expected levels";
    for (const auto& l : cfg.levels) os << ' ' << l.spatial;
    os << ", stem sizes";
    std::size_t s = cfg.input_size;
    for (std::size_t k = 0; k < cfg.stem_channels.size() && s > 1; ++k) {
      s = (s - 1) / 2 + 1;
      os << ' ' << s;
    }
    return os.str();
  }

  std::vector<ConvBnRelu<T>> stem_;
  std::vector<std::pair<ConvBnRelu<T>, ConvBnRelu<T>>> levels_;
};

// ---------------------------------------------------------------------------
// Fusion

// Batch norm is applied to every resampled block immediately before it is
// concatenated. Resampling between non-adjacent levels goes stage by stage
// through the ladder.
template <typename T>
class PyramidFusion {
 public:
  PyramidFusion(const PyramidConfig& cfg, FusionMode mode, ParamStore<T>& store)
      : mode_(mode), sizes_(cfg.spatial_sizes()), channels_(cfg.channels()) {
    const std::size_t L = sizes_.size();
    for (std::size_t i = 0; i + 1 < L; ++i) pool_plan_.push_back(plan_pool_step(sizes_[i], sizes_[i + 1]));
    for (std::size_t i = 0; i + 1 < L; ++i) deconv_plan_.push_back(plan_deconv_step(sizes_[i + 1], sizes_[i]));
    auto bn = [&store](const std::string& name, std::size_t c) {
      return BatchNormLayer<T>::make(store, "fusion." + name, c);
    };
    const auto stacked = fused_channels(channels_, mode);
    switch (mode) {
      case FusionMode::Conventional:
        break;
      case FusionMode::PoolConcat:
        for (std::size_t i = 0; i < L; ++i) {
          self_bn_.push_back(bn("self" + std::to_string(i) + ".bn", channels_[i]));
          if (i > 0) cross_bn_.push_back(bn("pool" + std::to_string(i) + ".bn", stacked[i - 1]));
        }
        break;
      case FusionMode::DeconvConcat:
        for (std::size_t i = 0; i < L; ++i) {
          self_bn_.push_back(bn("self" + std::to_string(i) + ".bn", channels_[i]));
        }
        for (std::size_t i = 0; i + 1 < L; ++i) {
          cross_bn_.push_back(bn("up" + std::to_string(i) + ".bn", stacked[i + 1]));
          up_.push_back(ConvLayer<T>::make_upsample(store, "fusion.up" + std::to_string(i),
                                                    stacked[i + 1], deconv_plan_[i]));
        }
        break;
      case FusionMode::Rainbow:
        // block_bn_[target][source]; rainbow_up_[source][target] for target < source.
        block_bn_.resize(L);
        for (std::size_t i = 0; i < L; ++i) {
          for (std::size_t j = 0; j < L; ++j) {
            block_bn_[i].push_back(
                bn("rainbow.src" + std::to_string(j) + ".dst" + std::to_string(i) + ".bn",
                   channels_[j]));
          }
        }
        rainbow_up_.resize(L);
        for (std::size_t j = 0; j < L; ++j) {
          rainbow_up_[j].resize(j);
          for (std::size_t i = j; i-- > 0;) {
            rainbow_up_[j][i] = ConvLayer<T>::make_upsample(
                store, "fusion.rainbow.src" + std::to_string(j) + ".up" + std::to_string(i),
                channels_[j], deconv_plan_[i]);
          }
        }
        break;
    }
  }

  FusionMode mode() const { return mode_; }
  const std::vector<PoolGeometry>& pool_plan() const { return pool_plan_; }
  const std::vector<ConvGeometry>& deconv_plan() const { return deconv_plan_; }

  std::vector<TensorId> forward(GradTape<T>& tape, const std::vector<TensorId>& levels,
                                bool training) const {
    if (levels.size() != sizes_.size()) {
      throw DimensionError("levels", std::to_string(levels.size()) + " pyramid levels, expected " +
                                         std::to_string(sizes_.size()));
    }
    switch (mode_) {
      case FusionMode::Conventional: return levels;
      case FusionMode::PoolConcat: return fuse_pooling(tape, levels, training);
      case FusionMode::DeconvConcat: return fuse_deconv(tape, levels, training);
      case FusionMode::Rainbow: return fuse_rainbow(tape, levels, training);
    }
    return levels;
  }

 private:
  // stack_0 = BN(l_0); stack_i = [BN(pool(stack_{i-1})), BN(l_i)]
  std::vector<TensorId> fuse_pooling(GradTape<T>& tape, const std::vector<TensorId>& levels,
                                     bool training) const {
    std::vector<TensorId> out;
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const TensorId self = self_bn_[i].forward(tape, levels[i], training);
      if (i == 0) {
        out.push_back(self);
        continue;
      }
      const TensorId pooled = ops::max_pool2d(tape, out[i - 1], pool_plan_[i - 1]);
      out.push_back(ops::concat_channels(tape, {cross_bn_[i - 1].forward(tape, pooled, training), self}));
    }
    return out;
  }

  // stack_{L-1} = BN(l_{L-1}); stack_i = [BN(l_i), BN(deconv(stack_{i+1}))]
  std::vector<TensorId> fuse_deconv(GradTape<T>& tape, const std::vector<TensorId>& levels,
                                    bool training) const {
    const std::size_t L = levels.size();
    std::vector<TensorId> out(L);
    for (std::size_t i = L; i-- > 0;) {
      const TensorId self = self_bn_[i].forward(tape, levels[i], training);
      if (i == L - 1) {
        out[i] = self;
        continue;
      }
      const TensorId up = up_[i].forward(tape, out[i + 1]);
      out[i] = ops::concat_channels(tape, {self, cross_bn_[i].forward(tape, up, training)});
    }
    return out;
  }

  // out_i = [BN(resample(l_0 -> i)), ..., BN(resample(l_{L-1} -> i))]
  std::vector<TensorId> fuse_rainbow(GradTape<T>& tape, const std::vector<TensorId>& levels,
                                     bool training) const {
    const std::size_t L = levels.size();
    // resampled[j][i]: source j brought to level i's size.
    std::vector<std::vector<TensorId>> resampled(L, std::vector<TensorId>(L));
    for (std::size_t j = 0; j < L; ++j) {
      resampled[j][j] = levels[j];
      for (std::size_t i = j + 1; i < L; ++i) {
        resampled[j][i] = ops::max_pool2d(tape, resampled[j][i - 1], pool_plan_[i - 1]);
      }
      for (std::size_t i = j; i-- > 0;) {
        resampled[j][i] = rainbow_up_[j][i].forward(tape, resampled[j][i + 1]);
      }
    }
    std::vector<TensorId> out;
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<TensorId> blocks;
      for (std::size_t j = 0; j < L; ++j) {
        blocks.push_back(block_bn_[i][j].forward(tape, resampled[j][i], training));
      }
      out.push_back(ops::concat_channels(tape, blocks));
    }
    return out;
  }

  FusionMode mode_;
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> channels_;
  std::vector<PoolGeometry> pool_plan_;     // level i -> i+1
  std::vector<ConvGeometry> deconv_plan_;   // level i+1 -> i
  std::vector<BatchNormLayer<T>> self_bn_;
  std::vector<BatchNormLayer<T>> cross_bn_;
  std::vector<ConvLayer<T>> up_;
  std::vector<std::vector<BatchNormLayer<T>>> block_bn_;
  std::vector<std::vector<ConvLayer<T>>> rainbow_up_;
};

}  // namespace rssd

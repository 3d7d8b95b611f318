#pragma once

// key = value run configuration. '#' starts a comment. Later assignments
// (and command-line flags) override earlier ones.

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rssd/data.hpp"
#include "rssd/eval.hpp"
#include "rssd/model.hpp"
#include "rssd/train.hpp"

namespace rssd {

enum class Precision { Float, Double };

struct RunConfig {
  DetectorConfig model;
  TrainConfig train;
  EvalOptions eval;
  SyntheticSpec data = SyntheticSpec::toy();
  std::size_t train_images = 400;
  std::size_t test_images = 100;
  Precision precision = Precision::Float;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto t = trim(v);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc{} || ptr != t.data() + t.size()) {
    throw ConfigError("bad value '" + v + "' for " + key);
  }
  return out;
}

template <typename N>
std::vector<N> parse_list(const std::string& key, const std::string& v) {
  std::vector<N> out;
  if (trim(v).empty()) return out;
  for (const auto& part : split(v, ',')) out.push_back(parse_number<N>(key, part));
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "off" || t == "no") return false;
  throw ConfigError("bad boolean '" + v + "' for " + key);
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "config") {
  KeyValues kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
    kv.push_back({key, detail::trim(line.substr(eq + 1))});
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  return parse_key_values(f, path);
}

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "preset", "input_size", "levels", "stem_channels", "channel_scale", "issd_channels", "fusion", "boxes",
      "shared", "classes", "model_seed", "precision", "steps", "batch_size", "lr", "momentum", "weight_decay",
      "milestones", "lr_decay", "flip", "seed", "untie_step", "grad_clip", "score_threshold", "nms_threshold",
      "top_k", "iou_threshold", "size_score_threshold", "size_iou_threshold", "raw_precision", "image_size",
      "objects", "size_weights", "data_seed", "train_images", "test_images"};
  return keys;
}

inline PyramidConfig pyramid_preset(const std::string& name) {
  if (name == "canonical300") return PyramidConfig::canonical300();
  if (name == "canonical300_issd") return PyramidConfig::canonical300_issd();
  if (name == "toy96") return PyramidConfig::toy96();
  throw ConfigError("unknown preset '" + name + "' (expected canonical300|canonical300_issd|toy96)");
}

// Builds a RunConfig from assignments in order. `preset` is applied first
// wherever it appears. Box layout defaults to the conventional 4,6,6,6,4,4
// on six levels and all-4 otherwise.
inline RunConfig make_run_config(const KeyValues& kv) {
  using namespace detail;
  RunConfig rc;
  rc.model.pyramid = PyramidConfig::toy96();
  for (const auto& [k, v] : kv) {
    if (k == "preset") rc.model.pyramid = pyramid_preset(v);
  }
  std::optional<std::vector<std::size_t>> boxes;
  std::optional<bool> shared;
  std::optional<std::size_t> image_size;
  for (const auto& [k, v] : kv) {
    auto& pc = rc.model.pyramid;
    if (k == "preset") continue;
    else if (k == "input_size") pc.input_size = parse_number<std::size_t>(k, v);
    else if (k == "levels") {
      pc.levels.clear();
      for (const auto& item : split(v, ',')) {
        const auto parts = split(item, 'x');
        if (parts.size() != 2) throw ConfigError("levels entries are SIZExCHANNELS, got '" + item + "'");
        pc.levels.push_back({parse_number<std::size_t>(k, parts[0]), parse_number<std::size_t>(k, parts[1])});
      }
    } else if (k == "stem_channels") pc.stem_channels = parse_list<std::size_t>(k, v);
    else if (k == "channel_scale") {
      const auto parts = split(v, '/');
      if (parts.size() > 2) throw ConfigError("channel_scale is NUM or NUM/DEN");
      pc.channel_scale = {parse_number<std::size_t>(k, parts[0]),
                          parts.size() == 2 ? parse_number<std::size_t>(k, parts[1]) : 1};
    } else if (k == "issd_channels") {
      pc.issd_channels.clear();
      if (trim(v) == "none" || trim(v).empty()) continue;
      for (const auto& item : split(v, ',')) {
        const auto parts = split(item, ':');
        if (parts.size() != 3) throw ConfigError("issd_channels entries are LEVEL:MID:OUT, got '" + item + "'");
        pc.issd_channels.push_back({parse_number<std::size_t>(k, parts[0]), parse_number<std::size_t>(k, parts[1]),
                                    parse_number<std::size_t>(k, parts[2])});
      }
    } else if (k == "fusion") rc.model.fusion = parse_fusion_mode(v);
    else if (k == "boxes") boxes = parse_list<std::size_t>(k, v);
    else if (k == "shared") shared = parse_bool(k, v);
    else if (k == "classes") {
      rc.model.class_names = split(v, ',');
      rc.data.classes.clear();
      for (const auto& c : rc.model.class_names) rc.data.classes.push_back(parse_shape_kind(c));
    } else if (k == "model_seed") rc.model.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "precision") {
      if (v == "float") rc.precision = Precision::Float;
      else if (v == "double") rc.precision = Precision::Double;
      else throw ConfigError("precision must be float or double");
    } else if (k == "steps") rc.train.steps = parse_number<std::size_t>(k, v);
    else if (k == "batch_size") rc.train.batch_size = parse_number<std::size_t>(k, v);
    else if (k == "lr") rc.train.lr = parse_number<double>(k, v);
    else if (k == "momentum") rc.train.momentum = parse_number<double>(k, v);
    else if (k == "weight_decay") rc.train.weight_decay = parse_number<double>(k, v);
    else if (k == "milestones") rc.train.milestones = parse_list<std::size_t>(k, v);
    else if (k == "lr_decay") rc.train.lr_decay = parse_number<double>(k, v);
    else if (k == "flip") rc.train.flip = parse_bool(k, v);
    else if (k == "seed") rc.train.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "untie_step") rc.train.untie_step = parse_number<std::size_t>(k, v);
    else if (k == "grad_clip") rc.train.grad_clip = parse_number<double>(k, v);
    else if (k == "score_threshold") rc.eval.detect.score_threshold = parse_number<double>(k, v);
    else if (k == "nms_threshold") rc.eval.detect.nms_threshold = parse_number<double>(k, v);
    else if (k == "top_k") rc.eval.detect.top_k = parse_number<std::size_t>(k, v);
    else if (k == "iou_threshold") rc.eval.iou_threshold = parse_number<double>(k, v);
    else if (k == "size_score_threshold") rc.eval.size_score_threshold = parse_number<double>(k, v);
    else if (k == "size_iou_threshold") rc.eval.size_iou_threshold = parse_number<double>(k, v);
    else if (k == "raw_precision") rc.eval.raw_precision = parse_bool(k, v);
    else if (k == "image_size") image_size = parse_number<std::size_t>(k, v);
    else if (k == "objects") {
      const auto parts = split(v, '-');
      rc.data.min_objects = parse_number<std::size_t>(k, parts.front());
      rc.data.max_objects = parse_number<std::size_t>(k, parts.back());
    } else if (k == "size_weights") {
      const auto w = parse_list<double>(k, v);
      if (w.size() != 3) throw ConfigError("size_weights needs three values (small, medium, large)");
      rc.data.size_weights = {w[0], w[1], w[2]};
    } else if (k == "data_seed") rc.data.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "train_images") rc.train_images = parse_number<std::size_t>(k, v);
    else if (k == "test_images") rc.test_images = parse_number<std::size_t>(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  const std::size_t L = rc.model.pyramid.num_levels();
  if (!boxes) boxes = L == 6 ? BoxLayout::conventional().boxes_per_position : std::vector<std::size_t>(L, 4);
  if (boxes->size() == 1 && L > 1) boxes = std::vector<std::size_t>(L, boxes->front());
  rc.model.layout = {*boxes, shared.value_or(false)};
  rc.data.image_size = image_size.value_or(rc.model.pyramid.input_size);
  rc.model.validate();
  rc.train.validate();
  rc.data.validate();
  if (rc.eval.detect.top_k == 0) throw ConfigError("top_k must be positive");
  if (!(rc.eval.iou_threshold > 0 && rc.eval.iou_threshold < 1)) throw ConfigError("iou_threshold must be in (0, 1)");
  return rc;
}

}  // namespace rssd

#pragma once

// Backbone + fusion + classifier heads, and its checkpoint file.

#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rssd/heads.hpp"
#include "rssd/pyramid.hpp"

namespace rssd {

struct DetectorConfig {
  PyramidConfig pyramid = PyramidConfig::toy96();
  FusionMode fusion = FusionMode::Rainbow;
  BoxLayout layout = BoxLayout::shared(4, 5);
  std::vector<std::string> class_names{"disc", "square", "triangle"};  // without background
  std::uint64_t seed = 1;

  std::size_t num_classes() const { return class_names.size() + 1; }

  void validate() const {
    pyramid.validate();
    layout.validate(pyramid.num_levels());
    if (class_names.empty()) throw ConfigError("at least one object class is required");
    if (layout.shared_classifier && fusion != FusionMode::Rainbow) {
      const auto c = fused_channels(pyramid.channels(), fusion);
      if (std::adjacent_find(c.begin(), c.end(), std::not_equal_to<>()) != c.end()) {
        throw ConfigError("a shared classifier needs rainbow fusion (uniform level channels), got " +
                          to_string(fusion));
      }
    }
  }
  bool operator==(const DetectorConfig&) const = default;
};

template <typename T>
class Detector {
 public:
  explicit Detector(DetectorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    backbone_ = std::make_unique<Backbone<T>>(cfg_.pyramid, store_, rng);
    fusion_ = std::make_unique<PyramidFusion<T>>(cfg_.pyramid, cfg_.fusion, store_);
    const auto shapes = pyramid_shape_table(cfg_.pyramid, cfg_.fusion);
    std::vector<std::size_t> channels;
    for (const auto& s : shapes) channels.push_back(s.c);
    heads_ = std::make_unique<ClassifierHeads<T>>(channels, cfg_.layout, cfg_.num_classes(), store_, rng);
    anchors_ = generate_default_boxes(cfg_.layout, cfg_.pyramid);
  }

  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  const DetectorConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  ClassifierHeads<T>& heads() { return *heads_; }
  const ClassifierHeads<T>& heads() const { return *heads_; }
  const std::vector<DefaultBox>& anchors() const { return anchors_; }
  std::size_t num_classes() const { return cfg_.num_classes(); }

  std::vector<TensorId> fused_levels(GradTape<T>& tape, TensorId images, bool training) const {
    return fusion_->forward(tape, backbone_->forward(tape, images, training), training);
  }

  // (N, 1, A, C+4)
  TensorId forward(GradTape<T>& tape, TensorId images, bool training) const {
    return heads_->forward(tape, fused_levels(tape, images, training));
  }

  Tensor4<T> predict(const Tensor4<T>& images) const {
    GradTape<T> tape;
    return tape.value(forward(tape, tape.input(images), false));
  }

 private:
  DetectorConfig cfg_;
  ParamStore<T> store_;
  std::unique_ptr<Backbone<T>> backbone_;
  std::unique_ptr<PyramidFusion<T>> fusion_;
  std::unique_ptr<ClassifierHeads<T>> heads_;
  std::vector<DefaultBox> anchors_;
};

// ---------------------------------------------------------------------------
// Checkpoint: magic, u64 manifest length, JSON manifest, then one tensor
// record per parameter in manifest order.

inline constexpr std::array<char, 8> kCheckpointMagic{'R', 'S', 'S', 'D', 'C', 'K', 'P', '1'};

inline nlohmann::json config_to_json(const DetectorConfig& c) {
  nlohmann::json j;
  j["input_size"] = c.pyramid.input_size;
  j["image_channels"] = c.pyramid.image_channels;
  j["levels"] = nlohmann::json::array();
  for (const auto& l : c.pyramid.levels) j["levels"].push_back({l.spatial, l.channels});
  j["stem_channels"] = c.pyramid.stem_channels;
  j["channel_scale"] = {c.pyramid.channel_scale.num, c.pyramid.channel_scale.den};
  j["issd_channels"] = nlohmann::json::array();
  for (const auto& o : c.pyramid.issd_channels) j["issd_channels"].push_back({o.level, o.mid, o.out});
  j["fusion"] = to_string(c.fusion);
  j["boxes_per_position"] = c.layout.boxes_per_position;
  j["shared_classifier"] = c.layout.shared_classifier;
  j["class_names"] = c.class_names;
  j["num_classes"] = c.num_classes();
  j["seed"] = c.seed;
  return j;
}

inline DetectorConfig config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.pyramid = PyramidConfig{};
  c.pyramid.input_size = j.at("input_size").get<std::size_t>();
  c.pyramid.image_channels = j.at("image_channels").get<std::size_t>();
  for (const auto& l : j.at("levels")) c.pyramid.levels.push_back({l.at(0).get<std::size_t>(), l.at(1).get<std::size_t>()});
  c.pyramid.stem_channels = j.at("stem_channels").get<std::vector<std::size_t>>();
  c.pyramid.channel_scale = {j.at("channel_scale").at(0).get<std::size_t>(), j.at("channel_scale").at(1).get<std::size_t>()};
  for (const auto& o : j.at("issd_channels")) {
    c.pyramid.issd_channels.push_back({o.at(0).get<std::size_t>(), o.at(1).get<std::size_t>(), o.at(2).get<std::size_t>()});
  }
  c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
  c.layout.boxes_per_position = j.at("boxes_per_position").get<std::vector<std::size_t>>();
  c.layout.shared_classifier = j.at("shared_classifier").get<bool>();
  c.class_names = j.at("class_names").get<std::vector<std::string>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

template <typename T>
void save_checkpoint(std::ostream& os, const Detector<T>& model) {
  nlohmann::json manifest;
  manifest["config"] = config_to_json(model.config());
  manifest["anchors"] = model.anchors().size();
  manifest["params"] = nlohmann::json::array();
  for (const auto& p : model.params()) {
    const Shape4 s = p.value.shape();
    manifest["params"].push_back({{"name", p.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"trainable", p.trainable}});
  }
  const std::string text = manifest.dump();
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), std::streamsize(text.size()));
  for (const auto& p : model.params()) write_tensor(os, p.value);
  if (!os) throw DataError("failed writing checkpoint");
}

template <typename T>
std::unique_ptr<Detector<T>> load_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw DataError("not a checkpoint file");
  const auto len = detail::read_le<std::uint64_t>(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), std::streamsize(len))) throw DataError("truncated checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  auto model = std::make_unique<Detector<T>>(config_from_json(manifest.at("config")));
  if (manifest.at("anchors").get<std::size_t>() != model->anchors().size()) {
    throw ValidationError("checkpoint anchor count differs from the rebuilt model");
  }
  const auto& params = manifest.at("params");
  if (params.size() != model->params().size()) throw ValidationError("checkpoint parameter count differs");
  for (const auto& entry : params) {
    auto& p = model->params().at(entry.at("name").get<std::string>());
    Tensor4<T> t = read_tensor<T>(is);
    if (t.shape() != p.value.shape()) {
      throw ValidationError("checkpoint tensor '" + p.name + "' has shape " + t.shape().str() + ", model expects " +
                            p.value.shape().str());
    }
    p.value = std::move(t);
  }
  return model;
}

}  // namespace rssd

#pragma once

// Synthetic shapes dataset, annotation/detection files and dataset stats.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rssd/annotations.hpp"
#include "rssd/metrics.hpp"
#include "rssd/tensor.hpp"

namespace rssd {

enum class ShapeKind { Disc, Square, Triangle, Ring };

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Disc: return "disc";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Ring: return "ring";
  }
  return "?";
}

inline ShapeKind parse_shape_kind(const std::string& s) {
  for (ShapeKind k : {ShapeKind::Disc, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Ring}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown shape class '" + s + "' (expected disc|square|triangle|ring)");
}

// Equivalent side sqrt(area) range for one size bucket, [lo, hi).
struct SideRange {
  double lo = 0;
  double hi = 0;
  bool operator==(const SideRange&) const = default;
};

struct SyntheticSpec {
  std::size_t image_size = 96;
  std::vector<ShapeKind> classes{ShapeKind::Disc, ShapeKind::Square, ShapeKind::Triangle};
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::array<double, 3> size_weights{0.3, 0.7, 0.0};  // small, medium, large
  std::array<SideRange, 3> sides{{{12, 32}, {32, 48}, {96, 140}}};
  double max_aspect = 1.4;
  double max_iou = 0.3;
  std::size_t max_attempts = 50;  // per object
  std::size_t max_layouts = 50;   // per image
  std::uint64_t seed = 1;

  // Desk-scale training set for the 96 px ladder.
  static SyntheticSpec toy() { return {}; }

  // All three buckets on 256 px images.
  static SyntheticSpec mixed() {
    SyntheticSpec s;
    s.image_size = 256;
    s.classes = {ShapeKind::Disc, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Ring};
    s.size_weights = {0.3, 0.4, 0.3};
    s.sides = {{{12, 32}, {32, 96}, {96, 140}}};
    return s;
  }

  std::vector<std::string> class_names() const {
    std::vector<std::string> out;
    for (ShapeKind k : classes) out.push_back(to_string(k));
    return out;
  }

  void validate() const {
    double sum = 0;
    for (double w : size_weights) {
      if (w < 0) throw ConfigError("size weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1) > 1e-9) throw ConfigError("size weights must sum to 1");
    if (classes.empty()) throw ConfigError("synthetic spec needs at least one class");
    if (min_objects < 1 || min_objects > max_objects) throw ConfigError("objects per image range is empty");
    const std::array<double, 3> lo{0, 32, 96}, hi{32, 96, 1e300};
    for (std::size_t b = 0; b < 3; ++b) {
      if (size_weights[b] == 0) continue;
      if (!(sides[b].lo < sides[b].hi) || sides[b].lo < lo[b] || sides[b].hi > hi[b]) {
        throw ConfigError(std::string("side range for the ") + kBucketNames[b] +
                          " bucket leaves its area bucket");
      }
      if (sides[b].lo > double(image_size)) {
        throw ConfigError(std::string(kBucketNames[b]) + " objects do not fit the image");
      }
    }
  }
};

struct Dataset {
  Tensor4<float> images;  // (n, 3, S, S), values in [0, 1]
  AnnotationSet annotations;
};

namespace detail {

inline double unit(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }
inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }
inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + std::size_t(unit(rng) * double(hi - lo + 1));
}

inline bool inside(ShapeKind k, double x, double y, double x0, double y0, double w, double h) {
  const double u = (x - x0) / w, v = (y - y0) / h;  // [0,1] inside the frame
  if (u < 0 || u > 1 || v < 0 || v > 1) return false;
  const double du = 2 * u - 1, dv = 2 * v - 1, r2 = du * du + dv * dv;
  switch (k) {
    case ShapeKind::Square: return true;
    case ShapeKind::Disc: return r2 <= 1;
    case ShapeKind::Ring: return r2 <= 1 && r2 >= 0.5 * 0.5;
    case ShapeKind::Triangle: return std::abs(du) <= v;
  }
  return false;
}

struct Placed {
  ShapeKind kind;
  double x0, y0, w, h;
  Box mask_box;
};

// Pixel-exact extent of the shape's mask; empty box if no pixel is covered.
inline Box rasterized_extent(ShapeKind k, double x0, double y0, double w, double h, std::size_t size) {
  long xmin = long(size), ymin = long(size), xmax = -1, ymax = -1;
  const long lo_x = std::max(0L, long(std::floor(x0))), hi_x = std::min(long(size) - 1, long(std::ceil(x0 + w)));
  const long lo_y = std::max(0L, long(std::floor(y0))), hi_y = std::min(long(size) - 1, long(std::ceil(y0 + h)));
  for (long py = lo_y; py <= hi_y; ++py) {
    for (long px = lo_x; px <= hi_x; ++px) {
      if (!inside(k, double(px) + 0.5, double(py) + 0.5, x0, y0, w, h)) continue;
      xmin = std::min(xmin, px);
      xmax = std::max(xmax, px);
      ymin = std::min(ymin, py);
      ymax = std::max(ymax, py);
    }
  }
  if (xmax < 0) return {};
  return {double(xmin), double(ymin), double(xmax + 1), double(ymax + 1)};
}

inline bool intersects(const Box& a, const Box& b) {
  return a.xmin < b.xmax && b.xmin < a.xmax && a.ymin < b.ymax && b.ymin < a.ymax;
}

}  // namespace detail

inline std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%05zu", i);
  return buf;
}

// Each object first draws a size bucket, then retries placement inside that
// bucket until its rendered extent lands in the bucket and touches no other
// object (so annotations are the exact visible extents).
inline Dataset generate_dataset(const SyntheticSpec& spec, std::size_t n_images) {
  spec.validate();
  if (n_images < 1) throw ConfigError("n_images must be at least 1");
  const std::size_t S = spec.image_size;
  std::mt19937_64 rng(spec.seed);
  Dataset ds{Tensor4<float>(n_images, 3, S, S), {spec.class_names(), {}}};
  for (std::size_t i = 0; i < n_images; ++i) {
    ImageAnnotation ann{image_name(i), S, S, {}};
    std::array<double, 3> bg;
    for (double& c : bg) c = detail::uniform(rng, 0.0, 0.4);
    for (std::size_t c = 0; c < 3; ++c) {
      auto plane = ds.images.plane(i, c);
      for (float& v : plane) v = float(std::clamp(bg[c] + detail::uniform(rng, -0.05, 0.05), 0.0, 1.0));
    }
    // place one object of the given bucket and kind, or give up
    auto place = [&](std::vector<detail::Placed>& placed, std::size_t bucket, ShapeKind kind) {
      for (std::size_t attempt = 0; attempt < spec.max_attempts; ++attempt) {
        const double side = std::sqrt(detail::uniform(rng, spec.sides[bucket].lo * spec.sides[bucket].lo,
                                                      spec.sides[bucket].hi * spec.sides[bucket].hi));
        const double aspect = std::exp(detail::uniform(rng, -std::log(spec.max_aspect), std::log(spec.max_aspect)));
        const double w = side * std::sqrt(aspect), h = side / std::sqrt(aspect);
        if (w > double(S) || h > double(S)) continue;
        const double x0 = detail::uniform(rng, 0, double(S) - w), y0 = detail::uniform(rng, 0, double(S) - h);
        const Box ext = detail::rasterized_extent(kind, x0, y0, w, h, S);
        if (ext.area() == 0 || std::size_t(size_bucket(ext.area())) != bucket) continue;
        bool clear = true;
        for (const auto& p : placed) {
          if (detail::intersects(p.mask_box, ext) || iou(p.mask_box, ext) > spec.max_iou) clear = false;
        }
        if (!clear) continue;
        placed.push_back({kind, x0, y0, w, h, ext});
        return true;
      }
      return false;
    };
    // a layout that jams restarts the whole image
    std::vector<detail::Placed> placed;
    bool done = false;
    std::size_t failed_bucket = 0;
    for (std::size_t layout = 0; layout < spec.max_layouts && !done; ++layout) {
      placed.clear();
      done = true;
      const std::size_t count = detail::pick(rng, spec.min_objects, spec.max_objects);
      for (std::size_t o = 0; o < count && done; ++o) {
        const double u = detail::unit(rng);
        std::size_t bucket = 3;
        double acc = 0;
        for (std::size_t b = 0; b < 3 && bucket == 3; ++b) {
          acc += spec.size_weights[b];
          if (spec.size_weights[b] > 0 && u < acc) bucket = b;
        }
        while (bucket == 3 || spec.size_weights[bucket] == 0) --bucket;  // rounding at the top end
        const ShapeKind kind = spec.classes[detail::pick(rng, 0, spec.classes.size() - 1)];
        if (!place(placed, bucket, kind)) {
          done = false;
          failed_bucket = bucket;
        }
      }
    }
    if (!done) {
      throw GenerationError("could not place a " + std::string(kBucketNames[failed_bucket]) + " object in " +
                            ann.image_id + " after " + std::to_string(spec.max_layouts) +
                            " layouts; use fewer or smaller objects");
    }
    for (const auto& p : placed) {
      std::array<double, 3> color;
      for (double& c : color) c = detail::uniform(rng, 0.55, 1.0);
      for (std::size_t py = std::size_t(p.mask_box.ymin); py < std::size_t(p.mask_box.ymax); ++py) {
        for (std::size_t px = std::size_t(p.mask_box.xmin); px < std::size_t(p.mask_box.xmax); ++px) {
          if (!detail::inside(p.kind, double(px) + 0.5, double(py) + 0.5, p.x0, p.y0, p.w, p.h)) continue;
          for (std::size_t c = 0; c < 3; ++c) ds.images(i, c, py, px) = float(color[c]);
        }
      }
      int id = 0;
      for (std::size_t k = 0; k < spec.classes.size(); ++k) {
        if (spec.classes[k] == p.kind) id = int(k) + 1;
      }
      ann.objects.push_back({id, p.mask_box});
    }
    ds.annotations.images.push_back(std::move(ann));
  }
  return ds;
}

// Horizontal mirror of image n and its boxes (pixel space).
inline void flip_horizontal(Tensor4<float>& images, std::size_t n) {
  for (std::size_t c = 0; c < images.c(); ++c) {
    for (std::size_t y = 0; y < images.h(); ++y) {
      for (std::size_t x = 0; x < images.w() / 2; ++x) std::swap(images(n, c, y, x), images(n, c, y, images.w() - 1 - x));
    }
  }
}
inline ImageAnnotation flip_horizontal(ImageAnnotation im) {
  for (auto& o : im.objects) {
    const double w = double(im.width);
    o.box = {w - o.box.xmax, o.box.ymin, w - o.box.xmin, o.box.ymax};
  }
  return im;
}

// ---------------------------------------------------------------------------
// Annotation files: one JSON object per line, pixel coordinates.

inline void write_annotations(std::ostream& os, const AnnotationSet& set) {
  for (const auto& im : set.images) {
    nlohmann::json j;
    j["image_id"] = im.image_id;
    j["width"] = im.width;
    j["height"] = im.height;
    j["objects"] = nlohmann::json::array();
    for (const auto& o : im.objects) {
      j["objects"].push_back({{"class", set.class_name(o.class_id)},
                              {"xmin", o.box.xmin},
                              {"ymin", o.box.ymin},
                              {"xmax", o.box.xmax},
                              {"ymax", o.box.ymax}});
    }
    os << j.dump() << '\n';
  }
}

// Out-of-bounds boxes are clamped to the image and reported in `warnings`.
inline AnnotationSet read_annotations(std::istream& is, const std::vector<std::string>& class_names,
                                      std::vector<std::string>* warnings = nullptr) {
  AnnotationSet set{class_names, {}};
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ImageAnnotation im;
    try {
      const auto j = nlohmann::json::parse(line);
      im.image_id = j.at("image_id").get<std::string>();
      im.width = j.at("width").get<std::size_t>();
      im.height = j.at("height").get<std::size_t>();
      for (const auto& o : j.at("objects")) {
        const std::string name = o.at("class").get<std::string>();
        const int id = set.class_id(name);
        if (id == 0) throw ParseError(n, "unknown class '" + name + "'");
        Box b{o.at("xmin").get<double>(), o.at("ymin").get<double>(), o.at("xmax").get<double>(),
              o.at("ymax").get<double>()};
        if (!(b.xmin < b.xmax && b.ymin < b.ymax)) throw ParseError(n, "degenerate box");
        const Box c{std::clamp(b.xmin, 0.0, double(im.width)), std::clamp(b.ymin, 0.0, double(im.height)),
                    std::clamp(b.xmax, 0.0, double(im.width)), std::clamp(b.ymax, 0.0, double(im.height))};
        if (!(c == b) && warnings) {
          warnings->push_back("line " + std::to_string(n) + ": box outside " + im.image_id + " clamped");
        }
        im.objects.push_back({id, c});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, std::string("malformed annotation: ") + e.what());
    }
    if (set.find(im.image_id)) throw ParseError(n, "duplicate image id '" + im.image_id + "'");
    set.images.push_back(std::move(im));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Detection files: "image_id class_name score xmin ymin xmax ymax" in pixels.

// Scores as stored in detection files.
inline double quantize_score(double s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  return std::strtod(buf, nullptr);
}

inline void write_detections(std::ostream& os, const std::vector<Detection>& dets,
                             const std::vector<std::string>& class_names) {
  char score[64];
  for (const auto& d : dets) {
    if (d.class_id < 1 || std::size_t(d.class_id) > class_names.size()) {
      throw ValidationError("detection class id " + std::to_string(d.class_id) + " outside the class list");
    }
    std::snprintf(score, sizeof score, "%.6f", d.score);
    os << d.image_id << ' ' << class_names[std::size_t(d.class_id) - 1] << ' ' << score << ' '
       << format_double(d.box.xmin) << ' ' << format_double(d.box.ymin) << ' ' << format_double(d.box.xmax)
       << ' ' << format_double(d.box.ymax) << '\n';
  }
}

inline std::vector<Detection> read_detections(std::istream& is, const std::vector<std::string>& class_names) {
  std::vector<Detection> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::vector<std::string> f;
    for (std::string tok; fields >> tok;) f.push_back(tok);
    if (f.empty()) continue;
    if (f.size() != 7) throw ParseError(n, "expected 7 fields, got " + std::to_string(f.size()));
    Detection d;
    d.image_id = f[0];
    d.class_id = 0;
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      if (class_names[c] == f[1]) d.class_id = int(c) + 1;
    }
    if (d.class_id == 0) throw ParseError(n, "unknown class '" + f[1] + "'");
    double v[5];
    for (std::size_t k = 0; k < 5; ++k) {
      const std::string& s = f[2 + k];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v[k]);
      if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v[k])) {
        throw ParseError(n, "bad number '" + s + "'");
      }
    }
    d.score = v[0];
    d.box = {v[1], v[2], v[3], v[4]};
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stats

struct DatasetStats {
  std::array<std::size_t, 3> buckets{};
  std::vector<std::size_t> per_class;  // index class_id - 1
  std::size_t total = 0;
};

inline DatasetStats dataset_stats(const AnnotationSet& set) {
  DatasetStats s;
  s.per_class.assign(set.num_classes(), 0);
  for (const auto& im : set.images) {
    for (const auto& o : im.objects) {
      ++s.buckets[std::size_t(size_bucket(o.box.area()))];
      if (o.class_id >= 1 && std::size_t(o.class_id) <= s.per_class.size()) ++s.per_class[std::size_t(o.class_id) - 1];
      ++s.total;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dataset directories: classes.txt, annotations.jsonl, images.rt4

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "classes.txt");
    for (const auto& c : ds.annotations.class_names) f << c << '\n';
  }
  {
    std::ofstream f(dir / "annotations.jsonl");
    write_annotations(f, ds.annotations);
  }
  std::ofstream f(dir / "images.rt4", std::ios::binary);
  write_tensor(f, ds.images);
  if (!f) throw DataError("failed writing " + (dir / "images.rt4").string());
}

inline std::vector<std::string> read_class_list(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(f, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const auto classes = read_class_list(dir / "classes.txt");
  std::ifstream a(dir / "annotations.jsonl");
  if (!a) throw DataError("cannot open " + (dir / "annotations.jsonl").string());
  ds.annotations = read_annotations(a, classes);
  std::ifstream im(dir / "images.rt4", std::ios::binary);
  if (!im) throw DataError("cannot open " + (dir / "images.rt4").string());
  ds.images = read_tensor<float>(im);
  if (ds.images.n() != ds.annotations.images.size()) {
    throw ValidationError("images.rt4 holds " + std::to_string(ds.images.n()) + " images, annotations list " +
                          std::to_string(ds.annotations.images.size()));
  }
  return ds;
}

}  // namespace rssd

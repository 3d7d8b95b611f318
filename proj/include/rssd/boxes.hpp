#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rssd/error.hpp"
#include "rssd/pyramid.hpp"

namespace rssd {

// Corner-form box (xmin, ymin, xmax, ymax).
struct Box {
  double xmin = 0;
  double ymin = 0;
  double xmax = 0;
  double ymax = 0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool operator==(const Box&) const = default;
  auto operator<=>(const Box&) const = default;
};

// Center-form box (cx, cy, w, h).
struct CenterBox {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;

  Box corners() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
  static CenterBox from(const Box& b) {
    return {(b.xmin + b.xmax) / 2, (b.ymin + b.ymax) / 2, b.width(), b.height()};
  }
  bool operator==(const CenterBox&) const = default;
};

using DefaultBox = CenterBox;

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  const double inter = iw > 0 && ih > 0 ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline Box clamp_unit(const Box& b) {
  auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {c(b.xmin), c(b.ymin), c(b.xmax), c(b.ymax)};
}

// ---------------------------------------------------------------------------
// Default boxes

struct BoxLayout {
  std::vector<std::size_t> boxes_per_position;
  bool shared_classifier = false;

  static BoxLayout conventional() { return {{4, 6, 6, 6, 4, 4}, false}; }
  static BoxLayout shared(std::size_t k, std::size_t levels = 6) {
    return {std::vector<std::size_t>(levels, k), true};
  }

  bool uniform() const {
    return std::adjacent_find(boxes_per_position.begin(), boxes_per_position.end(),
                              std::not_equal_to<>()) == boxes_per_position.end();
  }

  void validate(std::size_t num_levels) const {
    if (boxes_per_position.size() != num_levels) {
      throw ConfigError("box layout has " + std::to_string(boxes_per_position.size()) +
                        " entries for " + std::to_string(num_levels) + " levels");
    }
    for (std::size_t k : boxes_per_position) {
      if (k != 4 && k != 6) throw ConfigError("boxes per position must be 4 or 6, got " + std::to_string(k));
    }
    if (shared_classifier && !uniform()) {
      throw ConfigError("a shared classifier needs the same box count on every level");
    }
  }
  bool operator==(const BoxLayout&) const = default;
};

inline constexpr double kMinScale = 0.2;
inline constexpr double kMaxScale = 0.9;

// Linear scale schedule; entry m (one past the last level) extrapolates the
// schedule and only feeds the last level's extra box.
inline std::vector<double> level_scales(std::size_t levels) {
  std::vector<double> s(levels + 1);
  if (levels == 1) return {kMinScale, kMaxScale};
  const double step = (kMaxScale - kMinScale) / double(levels - 1);
  for (std::size_t k = 0; k <= levels; ++k) s[k] = kMinScale + step * double(k);
  return s;
}

// Closed-form sum of f^2 * k over levels.
inline std::size_t count_boxes(const BoxLayout& layout, const PyramidConfig& cfg) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < std::min(layout.boxes_per_position.size(), cfg.levels.size()); ++i) {
    total += cfg.levels[i].spatial * cfg.levels[i].spatial * layout.boxes_per_position[i];
  }
  return total;
}

// Level-major, then row-major positions, then the ratio order
// {1, 1 (extra scale), 2, 1/2, 3, 1/3}. This ordering is frozen: head output
// channels and checkpoints depend on it.
inline std::vector<DefaultBox> generate_default_boxes(const BoxLayout& layout,
                                                      const PyramidConfig& cfg) {
  layout.validate(cfg.num_levels());
  const auto scales = level_scales(cfg.num_levels());
  std::vector<DefaultBox> boxes;
  boxes.reserve(count_boxes(layout, cfg));
  for (std::size_t l = 0; l < cfg.num_levels(); ++l) {
    const std::size_t f = cfg.levels[l].spatial;
    const double s = scales[l], extra = std::sqrt(scales[l] * scales[l + 1]);
    std::vector<std::pair<double, double>> shapes{{s, s}, {extra, extra}};
    const std::size_t ratios = layout.boxes_per_position[l] == 6 ? 3 : 2;
    for (std::size_t r = 2; r <= ratios; ++r) {
      const double q = std::sqrt(double(r));
      shapes.push_back({s * q, s / q});
      shapes.push_back({s / q, s * q});
    }
    for (std::size_t i = 0; i < f; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        const double cx = (double(j) + 0.5) / double(f), cy = (double(i) + 0.5) / double(f);
        for (const auto& [w, h] : shapes) boxes.push_back({cx, cy, w, h});
      }
    }
  }
  return boxes;
}

// First anchor index of every level, plus the total at the end.
inline std::vector<std::size_t> level_offsets(const BoxLayout& layout, const PyramidConfig& cfg) {
  std::vector<std::size_t> off{0};
  for (std::size_t l = 0; l < cfg.num_levels(); ++l) {
    off.push_back(off.back() + cfg.levels[l].spatial * cfg.levels[l].spatial *
                                   layout.boxes_per_position[l]);
  }
  return off;
}

// ---------------------------------------------------------------------------
// Encoding

inline constexpr double kCenterVariance = 0.1;
inline constexpr double kSizeVariance = 0.2;

using Offsets = std::array<double, 4>;

inline Offsets encode_box(const CenterBox& gt, const DefaultBox& anchor) {
  if (!(anchor.w > 0 && anchor.h > 0)) throw ValidationError("anchor width/height must be positive");
  if (!(gt.w > 0 && gt.h > 0)) throw ValidationError("box width/height must be positive");
  return {(gt.cx - anchor.cx) / (anchor.w * kCenterVariance),
          (gt.cy - anchor.cy) / (anchor.h * kCenterVariance),
          std::log(gt.w / anchor.w) / kSizeVariance, std::log(gt.h / anchor.h) / kSizeVariance};
}

inline CenterBox decode_box(const Offsets& o, const DefaultBox& anchor) {
  return {anchor.cx + o[0] * kCenterVariance * anchor.w, anchor.cy + o[1] * kCenterVariance * anchor.h,
          anchor.w * std::exp(o[2] * kSizeVariance), anchor.h * std::exp(o[3] * kSizeVariance)};
}

// ---------------------------------------------------------------------------
// Matching

struct GroundTruth {
  int class_id = 1;  // >= 1; 0 is background
  Box box;
  bool operator==(const GroundTruth&) const = default;
};

struct MatchResult {
  std::vector<int> gt_index;  // -1 for background
  std::vector<int> labels;    // 0 for background
  std::vector<Offsets> targets;
  std::size_t positives = 0;
};

inline constexpr double kMatchThreshold = 0.5;

// 1) Greedy bipartite step: repeatedly take the highest-IoU (gt, anchor)
//    pair among unassigned gts and anchors, so every gt with positive
//    overlap gets its own best anchor. Ties go to the lower gt, then anchor.
// 2) Every other anchor whose best IoU reaches the threshold takes its best
//    gt (lowest index on ties).
inline MatchResult match_anchors(const std::vector<DefaultBox>& anchors,
                                 const std::vector<GroundTruth>& gts,
                                 double iou_threshold = kMatchThreshold) {
  if (!(iou_threshold > 0 && iou_threshold < 1)) throw ConfigError("iou threshold must be in (0, 1)");
  const std::size_t A = anchors.size(), G = gts.size();
  MatchResult m{std::vector<int>(A, -1), std::vector<int>(A, 0), std::vector<Offsets>(A, Offsets{}), 0};
  if (G == 0) return m;
  std::vector<Box> corners(A);
  for (std::size_t a = 0; a < A; ++a) corners[a] = anchors[a].corners();
  std::vector<double> overlap(G * A);
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t a = 0; a < A; ++a) overlap[g * A + a] = iou(gts[g].box, corners[a]);
  }
  std::vector<char> gt_done(G, 0);
  for (std::size_t round = 0; round < G; ++round) {
    double best = 0;
    std::size_t bg = G, ba = A;
    for (std::size_t g = 0; g < G; ++g) {
      if (gt_done[g]) continue;
      for (std::size_t a = 0; a < A; ++a) {
        if (m.gt_index[a] >= 0) continue;
        if (overlap[g * A + a] > best) {
          best = overlap[g * A + a];
          bg = g;
          ba = a;
        }
      }
    }
    if (bg == G) break;
    gt_done[bg] = 1;
    m.gt_index[ba] = int(bg);
  }
  std::vector<char> forced(A, 0);
  for (std::size_t a = 0; a < A; ++a) forced[a] = m.gt_index[a] >= 0;
  for (std::size_t a = 0; a < A; ++a) {
    if (forced[a]) continue;
    double best = -1;
    std::size_t bg = 0;
    for (std::size_t g = 0; g < G; ++g) {
      if (overlap[g * A + a] > best) {
        best = overlap[g * A + a];
        bg = g;
      }
    }
    if (best >= iou_threshold) m.gt_index[a] = int(bg);
  }
  for (std::size_t a = 0; a < A; ++a) {
    if (m.gt_index[a] < 0) continue;
    const GroundTruth& gt = gts[std::size_t(m.gt_index[a])];
    m.labels[a] = gt.class_id;
    m.targets[a] = encode_box(CenterBox::from(gt.box), anchors[a]);
    ++m.positives;
  }
  return m;
}

}  // namespace rssd

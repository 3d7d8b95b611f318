#pragma once

// Slow, obviously-correct reference implementations used by the tests.

#include <algorithm>
#include <random>
#include <tuple>
#include <vector>

#include "rssd/annotations.hpp"
#include "rssd/boxes.hpp"
#include "rssd/postprocess.hpp"

namespace rssd::testing {

inline std::vector<DefaultBox> random_anchors(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> pos(0.1, 0.9), size(0.05, 0.6);
  std::vector<DefaultBox> out(n);
  for (auto& a : out) a = {pos(rng), pos(rng), size(rng), size(rng)};
  return out;
}

inline Box random_box(std::mt19937_64& rng, double min_side = 0.05, double max_side = 0.6) {
  std::uniform_real_distribution<double> pos(0.0, 1.0), size(min_side, max_side);
  const double w = size(rng), h = size(rng);
  const double x = pos(rng) * (1 - w), y = pos(rng) * (1 - h);
  return {x, y, x + w, y + h};
}

inline std::vector<GroundTruth> random_truth(std::mt19937_64& rng, std::size_t n, int classes) {
  std::uniform_int_distribution<int> cls(1, classes);
  std::vector<GroundTruth> out(n);
  for (auto& g : out) g = {cls(rng), random_box(rng)};
  return out;
}

// Both matching rules from an explicit sorted list of every overlapping pair.
inline std::vector<int> brute_force_match(const std::vector<DefaultBox>& anchors,
                                          const std::vector<GroundTruth>& gts, double thr) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t g = 0; g < gts.size(); ++g)
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const double v = iou(gts[g].box, anchors[a].corners());
      if (v > 0) pairs.push_back({-v, g, a});
    }
  std::sort(pairs.begin(), pairs.end());
  std::vector<int> out(anchors.size(), -1);
  std::vector<bool> gt_used(gts.size(), false);
  for (const auto& [v, g, a] : pairs) {
    if (gt_used[g] || out[a] >= 0) continue;
    gt_used[g] = true;
    out[a] = int(g);
  }
  const auto forced = out;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (forced[a] >= 0 || gts.empty()) continue;
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t g = 0; g < gts.size(); ++g) cand.push_back({-iou(gts[g].box, anchors[a].corners()), g});
    const auto best = *std::min_element(cand.begin(), cand.end());
    if (-best.first >= thr) out[a] = int(best.second);
  }
  return out;
}

// Textbook NMS: repeatedly keep the best remaining box and drop overlaps.
inline std::vector<Detection> brute_force_nms(std::vector<Detection> dets, double thr, std::size_t top_k) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<bool> alive(dets.size(), true);
  std::vector<Detection> kept;
  while (kept.size() < top_k) {
    std::size_t best = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && (best == dets.size() || dets[i].score > dets[best].score)) best = i;
    }
    if (best == dets.size()) break;
    kept.push_back(dets[best]);
    alive[best] = false;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && iou(dets[i].box, dets[best].box) > thr) alive[i] = false;
    }
  }
  return kept;
}

struct MiniDataset {
  AnnotationSet truth;
  std::vector<Detection> dets;
};

// Pixel-space images of 100x100 with jittered true hits, duplicates and
// clutter. Scores are coarse so ties occur.
inline MiniDataset random_mini_dataset(std::mt19937_64& rng, std::size_t images = 10, int classes = 2) {
  MiniDataset m;
  for (int c = 0; c < classes; ++c) m.truth.class_names.push_back("c" + std::to_string(c + 1));
  std::uniform_int_distribution<int> count(0, 4), cls(1, classes), coarse(1, 10), dup(0, 2);
  std::normal_distribution<double> jitter(0, 4);
  auto px = [](Box b) { return Box{b.xmin * 100, b.ymin * 100, b.xmax * 100, b.ymax * 100}; };
  for (std::size_t i = 0; i < images; ++i) {
    ImageAnnotation im{"im" + std::to_string(i), 100, 100, {}};
    const int n = count(rng);
    for (int k = 0; k < n; ++k) im.objects.push_back({cls(rng), px(random_box(rng, 0.1, 0.5))});
    for (const auto& o : im.objects) {
      for (int d = dup(rng); d >= 0; --d) {
        const Box b{o.box.xmin + jitter(rng), o.box.ymin + jitter(rng), o.box.xmax + jitter(rng),
                    o.box.ymax + jitter(rng)};
        m.dets.push_back({im.image_id, o.class_id, coarse(rng) / 10.0, b});
      }
    }
    for (int k = count(rng); k > 0; --k) m.dets.push_back({im.image_id, cls(rng), coarse(rng) / 10.0, px(random_box(rng))});
    m.truth.images.push_back(std::move(im));
  }
  return m;
}

// TP/FP flags in sweep order, from a full sort and an explicit scan of every
// same-class ground truth per detection.
inline std::vector<bool> brute_force_tp_flags(const MiniDataset& m, int class_id, double thr) {
  using Key = std::tuple<double, std::string, double, double, double, double>;
  std::vector<std::pair<Key, const Detection*>> order;
  for (const auto& d : m.dets) {
    if (d.class_id != class_id) continue;
    order.push_back({{-d.score, d.image_id, d.box.xmin, d.box.ymin, d.box.xmax, d.box.ymax}, &d});
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<std::string, std::size_t>> used;
  std::vector<bool> flags;
  for (const auto& [key, d] : order) {
    const ImageAnnotation* im = m.truth.find(d->image_id);
    double best = -1;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < im->objects.size(); ++g) {
      if (im->objects[g].class_id != class_id) continue;
      const double o = iou(d->box, im->objects[g].box);
      if (o > best) {
        best = o;
        best_g = g;
      }
    }
    const std::pair<std::string, std::size_t> slot{d->image_id, best_g};
    const bool taken = std::find(used.begin(), used.end(), slot) != used.end();
    const bool tp = best >= thr && !taken;
    if (tp) used.push_back(slot);
    flags.push_back(tp);
  }
  return flags;
}

}  // namespace rssd::testing

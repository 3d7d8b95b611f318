#pragma once

// Raw head outputs to final detections.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "rssd/boxes.hpp"
#include "rssd/loss.hpp"
#include "rssd/tensor.hpp"

namespace rssd {

struct Detection {
  std::string image_id;
  int class_id = 1;
  double score = 0;
  Box box;
  bool operator==(const Detection&) const = default;
};

struct DetectOptions {
  double score_threshold = 0.01;
  double nms_threshold = 0.45;
  std::size_t top_k = 200;
};

inline constexpr double kRecallScoreThreshold = 0.1;  // size-stratified recall
inline constexpr double kVisualScoreThreshold = 0.3;  // picture dumps

// Greedy suppression. Input order breaks score ties (earlier wins).
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold,
                                  std::size_t top_k) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  std::vector<char> suppressed(dets.size(), 0);
  for (std::size_t i = 0; i < order.size() && kept.size() < top_k; ++i) {
    if (suppressed[i]) continue;
    const Detection& d = dets[order[i]];
    kept.push_back(d);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (!suppressed[j] && iou(d.box, dets[order[j]].box) > iou_threshold) suppressed[j] = 1;
    }
  }
  return kept;
}

// Softmax probabilities for anchor rows of an (N, 1, A, C+4) prediction.
template <typename T>
std::vector<double> class_probabilities(const Tensor4<T>& pred, std::size_t n, std::size_t a,
                                        std::size_t num_classes) {
  const std::size_t D = pred.w();
  std::vector<double> row(num_classes), lp(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) row[c] = double(pred[(n * pred.h() + a) * D + c]);
  log_softmax(row.data(), num_classes, lp.data());
  for (double& v : lp) v = std::exp(v);
  return lp;
}

// Detections for image n of `pred`; boxes are normalized and clamped.
template <typename T>
std::vector<Detection> detect(const Tensor4<T>& pred, std::size_t n,
                              const std::vector<DefaultBox>& anchors, std::size_t num_classes,
                              const DetectOptions& opt, const std::string& image_id = {}) {
  if (pred.c() != 1 || pred.h() != anchors.size() || pred.w() != num_classes + 4 || n >= pred.n()) {
    throw DimensionError("h", "predictions " + pred.shape().str() + " do not match " +
                                  std::to_string(anchors.size()) + " anchors and " +
                                  std::to_string(num_classes) + " classes");
  }
  const std::size_t A = anchors.size(), D = pred.w();
  std::vector<std::vector<double>> probs(A);
  for (std::size_t a = 0; a < A; ++a) probs[a] = class_probabilities(pred, n, a, num_classes);
  std::vector<Detection> all;
  for (std::size_t c = 1; c < num_classes; ++c) {
    std::vector<Detection> cand;
    for (std::size_t a = 0; a < A; ++a) {
      if (!(probs[a][c] > opt.score_threshold)) continue;
      Offsets o;
      for (std::size_t k = 0; k < 4; ++k) o[k] = double(pred[(n * A + a) * D + num_classes + k]);
      cand.push_back({image_id, int(c), probs[a][c], clamp_unit(decode_box(o, anchors[a]).corners())});
    }
    auto kept = nms(cand, opt.nms_threshold, opt.top_k);
    all.insert(all.end(), kept.begin(), kept.end());
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (all.size() > opt.top_k) all.resize(opt.top_k);
  return all;
}

// Max non-background probability per anchor, used as "objectness" for
// visual dumps.
template <typename T>
std::vector<double> objectness(const Tensor4<T>& pred, std::size_t n, std::size_t num_classes) {
  std::vector<double> out(pred.h());
  for (std::size_t a = 0; a < pred.h(); ++a) {
    const auto p = class_probabilities(pred, n, a, num_classes);
    out[a] = *std::max_element(p.begin() + 1, p.end());
  }
  return out;
}

}  // namespace rssd

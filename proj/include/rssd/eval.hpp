#pragma once

// Runs a detector over a dataset and assembles the metric report.

#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rssd/data.hpp"
#include "rssd/metrics.hpp"
#include "rssd/model.hpp"

namespace rssd {

struct EvalOptions {
  DetectOptions detect{};
  double iou_threshold = 0.5;
  double size_score_threshold = kRecallScoreThreshold;
  double size_iou_threshold = 0.5;
  bool raw_precision = false;
  std::size_t batch_size = 16;
};

// Pixel-space detections with scores quantized the way detection files
// store them, so in-memory and on-disk evaluation agree exactly.
template <typename T>
std::vector<Detection> detect_dataset(const Detector<T>& model, const Dataset& data, const EvalOptions& opt) {
  if (model.config().class_names != data.annotations.class_names) {
    throw ValidationError("dataset classes differ from the model's");
  }
  const std::size_t N = data.images.n(), S = data.images.h(), C = data.images.c();
  if (S != model.config().pyramid.input_size) throw ValidationError("image size differs from the model input size");
  std::vector<Detection> out;
  for (std::size_t start = 0; start < N; start += opt.batch_size) {
    const std::size_t B = std::min(opt.batch_size, N - start);
    Tensor4<T> batch(B, C, S, S);
    for (std::size_t b = 0; b < B; ++b) {
      auto src = data.images.image(start + b);
      auto dst = batch.image(b);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = T(src[k]);
    }
    const Tensor4<T> pred = model.predict(batch);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& im = data.annotations.images[start + b];
      for (auto d : detect(pred, b, model.anchors(), model.num_classes(), opt.detect, im.image_id)) {
        d.box = pixel_box(d.box, im.width, im.height);
        d.score = quantize_score(d.score);
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

struct EvalReport {
  EvalOptions options;
  std::vector<std::string> class_names;
  std::size_t images = 0;
  std::size_t objects = 0;
  std::size_t detections = 0;
  APResult ap11;
  APResult ap_all;
  PrecisionTable precision;  // deciles
  double map07 = 0;
  SizeRecall size_recall;
};

inline EvalReport evaluate(const std::vector<Detection>& dets, const AnnotationSet& ann, const EvalOptions& opt = {}) {
  EvalReport r;
  r.options = opt;
  r.class_names = ann.class_names;
  r.images = ann.images.size();
  r.objects = ann.object_count();
  r.detections = dets.size();
  const auto curves = pr_curves(dets, ann, opt.iou_threshold);
  r.ap11 = evaluate_ap(curves, APMethod::Interp11);
  r.ap_all = evaluate_ap(curves, APMethod::AllPoints);
  r.precision = precision_at_recall(curves, decile_recall_points(), !opt.raw_precision);
  r.map07 = map_at_recall_07plus(r.precision);
  r.size_recall = size_stratified_recall(dets, ann, opt.size_score_threshold, opt.size_iou_threshold);
  return r;
}

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", round_half_up(100 * v, 1));
  return buf;
}

inline std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "# iou %.2f  score>%.3f  nms %.2f  top_k %zu  size: score>%.2f iou %.2f  precision %s\n",
                r.options.iou_threshold, r.options.detect.score_threshold, r.options.detect.nms_threshold,
                r.options.detect.top_k, r.options.size_score_threshold, r.options.size_iou_threshold,
                r.options.raw_precision ? "raw" : "interpolated");
  os << buf;
  os << "images " << r.images << "  objects " << r.objects << "  detections " << r.detections << "\n";
  os << "mAP interp11 " << percent(r.ap11.mAP) << "  all_points " << percent(r.ap_all.mAP) << "  mAP@0.7+ "
     << percent(r.map07) << "\n";
  for (std::size_t i = 0; i < r.ap11.classes.size(); ++i) {
    const auto& c = r.ap11.classes[i];
    os << "  " << r.class_names[std::size_t(c.class_id) - 1] << " npos " << c.npos << " AP "
       << (c.ap ? percent(*c.ap) : std::string("n/a")) << " / "
       << (r.ap_all.classes[i].ap ? percent(*r.ap_all.classes[i].ap) : std::string("n/a")) << "\n";
  }
  os << "precision@recall";
  for (std::size_t k = 0; k < r.precision.recall_points.size(); ++k) {
    std::snprintf(buf, sizeof buf, " %.1f:%s", r.precision.recall_points[k], percent(r.precision.mean[k]).c_str());
    os << buf;
  }
  os << "\nsize recall";
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& s = r.size_recall.buckets[b];
    os << "  " << kBucketNames[b] << " " << s.detected << "/" << s.total << " (" << percent(s.recall()) << ")";
  }
  os << "\n";
  return os.str();
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["thresholds"] = {{"iou", r.options.iou_threshold},
                     {"score", r.options.detect.score_threshold},
                     {"nms", r.options.detect.nms_threshold},
                     {"top_k", r.options.detect.top_k},
                     {"size_score", r.options.size_score_threshold},
                     {"size_iou", r.options.size_iou_threshold},
                     {"precision", r.options.raw_precision ? "raw" : "interpolated"}};
  j["images"] = r.images;
  j["objects"] = r.objects;
  j["detections"] = r.detections;
  j["map_interp11"] = r.ap11.mAP;
  j["map_all_points"] = r.ap_all.mAP;
  j["map_07plus"] = r.map07;
  j["classes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < r.ap11.classes.size(); ++i) {
    const auto& c = r.ap11.classes[i];
    nlohmann::json e{{"class", r.class_names[std::size_t(c.class_id) - 1]}, {"npos", c.npos}};
    e["ap_interp11"] = c.ap ? nlohmann::json(*c.ap) : nlohmann::json(nullptr);
    e["ap_all_points"] = r.ap_all.classes[i].ap ? nlohmann::json(*r.ap_all.classes[i].ap) : nlohmann::json(nullptr);
    j["classes"].push_back(e);
  }
  j["precision_at_recall"] = nlohmann::json::array();
  for (std::size_t k = 0; k < r.precision.recall_points.size(); ++k) {
    j["precision_at_recall"].push_back({r.precision.recall_points[k], r.precision.mean[k]});
  }
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& s = r.size_recall.buckets[b];
    j["size_recall"][kBucketNames[b]] = {{"detected", s.detected}, {"total", s.total}, {"recall", s.recall()}};
  }
  return j;
}

}  // namespace rssd

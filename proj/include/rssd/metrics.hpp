#pragma once

// VOC-style precision/recall evaluation, precision at fixed recall, the
// high-recall mean (recall 0.7 and up) and size-stratified recall.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rssd/annotations.hpp"
#include "rssd/postprocess.hpp"

namespace rssd {

struct ScoredFlag {
  std::string image_id;
  double score = 0;
  Box box;
  bool tp = false;
};

struct PRCurve {
  int class_id = 1;
  std::size_t npos = 0;
  std::vector<ScoredFlag> dets;  // sweep order
  std::vector<double> precision;
  std::vector<double> recall;
};

// Sweep order: score descending, then image id, then box.
inline bool detection_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  return a.box < b.box;
}

// Each detection takes the highest-IoU ground truth of its class in its
// image (lowest index on ties). It is a true positive when that overlap
// reaches the threshold and the ground truth is still unclaimed; later hits
// on a claimed ground truth are false positives. Boxes are in pixels.
inline PRCurve pr_curve(const std::vector<Detection>& dets, const AnnotationSet& ann, int class_id,
                        double iou_threshold = 0.5) {
  PRCurve curve;
  curve.class_id = class_id;
  std::map<std::string, std::vector<const ObjectAnnotation*>> gts;
  for (const auto& im : ann.images) {
    auto& v = gts[im.image_id];
    for (const auto& o : im.objects) {
      if (o.class_id == class_id) {
        v.push_back(&o);
        ++curve.npos;
      }
    }
  }
  std::vector<Detection> mine;
  for (const auto& d : dets) {
    if (!gts.contains(d.image_id)) throw ValidationError("detection for unknown image id '" + d.image_id + "'");
    if (d.class_id == class_id) mine.push_back(d);
  }
  std::sort(mine.begin(), mine.end(), detection_before);
  std::map<std::string, std::vector<char>> used;
  std::size_t tp = 0, fp = 0;
  for (const auto& d : mine) {
    const auto& cands = gts[d.image_id];
    auto& u = used[d.image_id];
    u.resize(cands.size(), 0);
    double best = -1;
    std::size_t bi = 0;
    for (std::size_t g = 0; g < cands.size(); ++g) {
      const double o = iou(d.box, cands[g]->box);
      if (o > best) {
        best = o;
        bi = g;
      }
    }
    const bool hit = !cands.empty() && best >= iou_threshold && !u[bi];
    if (hit) u[bi] = 1;
    hit ? ++tp : ++fp;
    curve.dets.push_back({d.image_id, d.score, d.box, hit});
    curve.precision.push_back(double(tp) / double(tp + fp));
    curve.recall.push_back(curve.npos ? double(tp) / double(curve.npos) : 0.0);
  }
  return curve;
}

inline std::vector<PRCurve> pr_curves(const std::vector<Detection>& dets, const AnnotationSet& ann,
                                      double iou_threshold = 0.5) {
  for (const auto& d : dets) {
    if (d.class_id < 1 || std::size_t(d.class_id) > ann.num_classes()) {
      throw ValidationError("detection class id " + std::to_string(d.class_id) + " outside the class list");
    }
  }
  std::vector<PRCurve> out;
  for (std::size_t c = 1; c <= ann.num_classes(); ++c) out.push_back(pr_curve(dets, ann, int(c), iou_threshold));
  return out;
}

// Largest precision at recall >= r, 0 when r is never reached.
inline double interpolated_precision(const PRCurve& c, double r) {
  double best = 0;
  for (std::size_t i = 0; i < c.recall.size(); ++i) {
    if (c.recall[i] >= r) best = std::max(best, c.precision[i]);
  }
  return best;
}

// Precision where the sweep first reaches recall r, 0 when it never does.
inline double raw_precision(const PRCurve& c, double r) {
  for (std::size_t i = 0; i < c.recall.size(); ++i) {
    if (c.recall[i] >= r) return c.precision[i];
  }
  return 0;
}

enum class APMethod { Interp11, AllPoints };

inline std::string to_string(APMethod m) { return m == APMethod::Interp11 ? "interp11" : "all_points"; }

// nullopt for a class without ground truth.
inline std::optional<double> average_precision(const PRCurve& c, APMethod method) {
  if (c.npos == 0) return std::nullopt;
  if (method == APMethod::Interp11) {
    double s = 0;
    for (int t = 0; t <= 10; ++t) s += interpolated_precision(c, t / 10.0);
    return s / 11.0;
  }
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), c.recall.begin(), c.recall.end());
  mpre.insert(mpre.end(), c.precision.begin(), c.precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i-- > 0;) mpre[i] = std::max(mpre[i], mpre[i + 1]);
  double ap = 0;
  for (std::size_t i = 1; i < mrec.size(); ++i) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

struct ClassAP {
  int class_id = 1;
  std::size_t npos = 0;
  std::optional<double> ap;  // empty: no ground truth, excluded from the mean
};

struct APResult {
  APMethod method = APMethod::Interp11;
  std::vector<ClassAP> classes;
  double mAP = 0;
};

inline APResult evaluate_ap(const std::vector<PRCurve>& curves, APMethod method) {
  APResult r{method, {}, 0};
  std::size_t counted = 0;
  for (const auto& c : curves) {
    r.classes.push_back({c.class_id, c.npos, average_precision(c, method)});
    if (r.classes.back().ap) {
      r.mAP += *r.classes.back().ap;
      ++counted;
    }
  }
  if (counted) r.mAP /= double(counted);
  return r;
}

struct PrecisionTable {
  std::vector<double> recall_points;
  std::vector<int> class_ids;                  // classes with ground truth
  std::vector<std::vector<double>> per_class;  // [class][point]
  std::vector<double> mean;                    // [point]
};

inline std::vector<double> percent_recall_points() {
  std::vector<double> r;
  for (int k = 0; k <= 100; ++k) r.push_back(k / 100.0);
  return r;
}

inline std::vector<double> decile_recall_points() {
  std::vector<double> r;
  for (int k = 0; k <= 10; ++k) r.push_back(k / 10.0);
  return r;
}

inline PrecisionTable precision_at_recall(const std::vector<PRCurve>& curves,
                                          const std::vector<double>& points,
                                          bool interpolated = true) {
  PrecisionTable t;
  t.recall_points = points;
  t.mean.assign(points.size(), 0.0);
  for (const auto& c : curves) {
    if (c.npos == 0) continue;
    t.class_ids.push_back(c.class_id);
    std::vector<double> row;
    for (double r : points) row.push_back(interpolated ? interpolated_precision(c, r) : raw_precision(c, r));
    t.per_class.push_back(std::move(row));
  }
  for (std::size_t k = 0; k < points.size(); ++k) {
    for (const auto& row : t.per_class) t.mean[k] += row[k];
    if (!t.per_class.empty()) t.mean[k] /= double(t.per_class.size());
  }
  return t;
}

inline constexpr std::array<double, 4> kHighRecallPoints{0.7, 0.8, 0.9, 1.0};

inline double map_at_recall_07plus(const std::array<double, 4>& precisions) {
  return (precisions[0] + precisions[1] + precisions[2] + precisions[3]) / 4.0;
}

inline double map_at_recall_07plus(const PrecisionTable& t) {
  std::array<double, 4> p{};
  for (std::size_t i = 0; i < kHighRecallPoints.size(); ++i) {
    bool found = false;
    for (std::size_t k = 0; k < t.recall_points.size(); ++k) {
      if (std::abs(t.recall_points[k] - kHighRecallPoints[i]) < 1e-12) {
        p[i] = t.mean[k];
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("precision table lacks recall point " + std::to_string(kHighRecallPoints[i]));
  }
  return map_at_recall_07plus(p);
}

// Half-up rounding for reported figures. The nudge absorbs binary error in
// values like 45.45 that sit exactly on a half in decimal.
inline double round_half_up(double v, int decimals = 1) {
  const double scale = std::pow(10.0, decimals);
  return std::floor(v * scale + 0.5 + 1e-9) / scale;
}

struct BucketRecall {
  std::size_t detected = 0;
  std::size_t total = 0;
  double recall() const { return total ? double(detected) / double(total) : 0.0; }
};

struct SizeRecall {
  double score_threshold = kRecallScoreThreshold;
  double iou_threshold = 0.5;
  std::array<BucketRecall, 3> buckets{};
  const BucketRecall& operator[](SizeBucket b) const { return buckets[std::size_t(b)]; }
};

// Objects of all classes pooled. An object counts as found when any
// detection of its class scoring above the threshold overlaps it by at
// least iou_threshold.
inline SizeRecall size_stratified_recall(const std::vector<Detection>& dets, const AnnotationSet& ann,
                                         double score_threshold = kRecallScoreThreshold,
                                         double iou_threshold = 0.5) {
  SizeRecall r{score_threshold, iou_threshold, {}};
  std::map<std::string, std::vector<const Detection*>> by_image;
  for (const auto& d : dets) {
    if (!ann.find(d.image_id)) throw ValidationError("detection for unknown image id '" + d.image_id + "'");
    if (d.score > score_threshold) by_image[d.image_id].push_back(&d);
  }
  for (const auto& im : ann.images) {
    if (im.width == 0 || im.height == 0) throw ValidationError("image '" + im.image_id + "' has no size");
    const auto& cands = by_image[im.image_id];
    for (const auto& o : im.objects) {
      auto& b = r.buckets[std::size_t(size_bucket(o.box.area()))];
      ++b.total;
      for (const Detection* d : cands) {
        if (d->class_id == o.class_id && iou(d->box, o.box) >= iou_threshold) {
          ++b.detected;
          break;
        }
      }
    }
  }
  return r;
}

// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Class-averaged interpolated precision at every 0.01 of recall.
inline std::string export_pr_csv(const std::vector<PRCurve>& curves, bool interpolated = true) {
  const auto t = precision_at_recall(curves, percent_recall_points(), interpolated);
  std::string out = "recall,precision\n";
  for (std::size_t k = 0; k < t.recall_points.size(); ++k) {
    out += format_double(t.recall_points[k]) + "," + format_double(t.mean[k]) + "\n";
  }
  return out;
}

inline std::vector<std::pair<double, double>> parse_pr_csv(const std::string& text) {
  std::vector<std::pair<double, double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1 || line.empty()) continue;
    const auto comma = line.find(',');
    double r = 0, p = 0;
    const char* end = line.data() + line.size();
    if (comma == std::string::npos ||
        std::from_chars(line.data(), line.data() + comma, r).ec != std::errc{} ||
        std::from_chars(line.data() + comma + 1, end, p).ec != std::errc{}) {
      throw ParseError(n, "expected 'recall,precision'");
    }
    rows.push_back({r, p});
  }
  return rows;
}

}  // namespace rssd

#pragma once

// Pixel-space ground truth shared by the data and metric code.

#include <array>
#include <string>
#include <vector>

#include "rssd/boxes.hpp"
#include "rssd/error.hpp"

namespace rssd {

struct ObjectAnnotation {
  int class_id = 1;  // 1-based index into AnnotationSet::class_names
  Box box;           // pixels
  bool operator==(const ObjectAnnotation&) const = default;
};

struct ImageAnnotation {
  std::string image_id;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<ObjectAnnotation> objects;
  bool operator==(const ImageAnnotation&) const = default;
};

struct AnnotationSet {
  std::vector<std::string> class_names;  // without background
  std::vector<ImageAnnotation> images;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t object_count() const {
    std::size_t n = 0;
    for (const auto& im : images) n += im.objects.size();
    return n;
  }

  int class_id(const std::string& name) const {
    for (std::size_t i = 0; i < class_names.size(); ++i) {
      if (class_names[i] == name) return int(i) + 1;
    }
    return 0;
  }
  const std::string& class_name(int id) const {
    if (id < 1 || std::size_t(id) > class_names.size()) {
      throw ValidationError("class id " + std::to_string(id) + " outside the class list");
    }
    return class_names[std::size_t(id) - 1];
  }

  const ImageAnnotation* find(const std::string& id) const {
    for (const auto& im : images) {
      if (im.image_id == id) return &im;
    }
    return nullptr;
  }
  bool operator==(const AnnotationSet&) const = default;
};

enum class SizeBucket { Small = 0, Medium = 1, Large = 2 };

inline constexpr double kSmallAreaLimit = 32.0 * 32.0;
inline constexpr double kLargeAreaLimit = 96.0 * 96.0;
inline constexpr const char* kBucketNames[] = {"small", "medium", "large"};

// area < 32^2 small, 32^2 <= area < 96^2 medium, otherwise large.
inline SizeBucket size_bucket(double area) {
  if (area < kSmallAreaLimit) return SizeBucket::Small;
  if (area < kLargeAreaLimit) return SizeBucket::Medium;
  return SizeBucket::Large;
}

inline Box normalize_box(const Box& b, std::size_t width, std::size_t height) {
  const double w = double(width), h = double(height);
  return {b.xmin / w, b.ymin / h, b.xmax / w, b.ymax / h};
}
inline Box pixel_box(const Box& b, std::size_t width, std::size_t height) {
  const double w = double(width), h = double(height);
  return {b.xmin * w, b.ymin * h, b.xmax * w, b.ymax * h};
}

}  // namespace rssd

#pragma once

#include "traplab/image.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace traplab {

/// Normalized rectangle; every coordinate lies in [0, 1].
struct BoundingBox {
  double x_min = 0;
  double y_min = 0;
  double width = 0;
  double height = 0;
};

struct DetectionRecord {
  std::string image_id;
  std::string category;
  BoundingBox bbox;
  double confidence = 0;
};

struct GroundTruth {
  std::string label;
  int count = 0;
  bool empty = true;
};

struct ImageEntry {
  std::string image_id;
  std::string source_path;
  std::optional<ImageSize> size;
  std::optional<std::string> sequence_id;
  std::optional<GroundTruth> truth;
};

struct IngestConfig {
  double confidence_threshold = 0.90;
  int crop_side = 256;

  void validate() const;
};

using DetectionList = std::vector<DetectionRecord>;
using ParsedImage = std::pair<ImageEntry, DetectionList>;

/// Throws ValidationError naming the image if the box leaves the unit square,
/// has non-positive extent, or confidence is outside [0, 1].
void validate_detection(const DetectionRecord& det);

/// Parses the detector's JSON output ({"images": [{"file", "detections"}]}).
/// Detections keep file order and are not thresholded.
std::vector<ParsedImage> parse_detection_file(std::string_view bytes);

/// Image id derived from a detector "file" entry: the path without its
/// extension, with directory separators replaced by '_'.
std::string image_id_from_path(std::string_view file);

DetectionList filter_detections(const DetectionList& dets, const IngestConfig& cfg);

enum class Occupancy { Empty, Animal };

Occupancy classify_empty(const DetectionList& dets, const IngestConfig& cfg);
int count_animals(const DetectionList& dets, const IngestConfig& cfg);

/// Count categories 1, 2, ..., 9, 10, 11-50, 51+ (ordinals 0..11).
class CountBin {
 public:
  static constexpr int kNumBins = 12;

  static CountBin of(long count);

  int index() const { return index_; }
  std::string name() const;

  friend bool operator==(CountBin, CountBin) = default;

 private:
  explicit CountBin(int index) : index_(index) {}
  int index_;
};

inline CountBin bin_count(long count) { return CountBin::of(count); }

struct PixelRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

/// Round-half-up conversion of a normalized box to pixels, clipped to the
/// image. Throws DomainError when the result has zero area.
PixelRect to_pixel_rect(const BoundingBox& bbox, ImageSize size);

struct Crop {
  std::string crop_id;
  std::string image_id;
  PixelRect source;
  RgbImage pixels;
};

/// Extracts the box and resamples it to crop_side x crop_side with bilinear
/// interpolation, ignoring the original aspect ratio.
Crop crop_and_resize(const RgbImage& image, const BoundingBox& bbox, const IngestConfig& cfg);

struct ConfusionCounts {
  std::uint64_t true_positive = 0;
  std::uint64_t false_positive = 0;
  std::uint64_t true_negative = 0;
  std::uint64_t false_negative = 0;

  std::uint64_t total() const {
    return true_positive + false_positive + true_negative + false_negative;
  }
};

/// Precision and recall are empty when their denominator is zero.
struct BinaryMetrics {
  double accuracy = 0;
  std::optional<double> precision;
  std::optional<double> recall;
};

BinaryMetrics binary_metrics(const ConfusionCounts& c);

struct CountMetrics {
  double top1_accuracy = 0;
  double within_one_bin_accuracy = 0;
};

CountMetrics count_metrics(const std::vector<long>& predicted, const std::vector<long>& truth);

/// Parses the ground-truth CSV (header image_id,label,count,empty).
std::vector<std::pair<std::string, GroundTruth>> parse_ground_truth_csv(std::string_view text);

}  // namespace traplab

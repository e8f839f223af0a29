#include "traplab/detection.hpp"

#include "traplab/core.hpp"
#include "traplab/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace traplab {

using nlohmann::json;

void IngestConfig::validate() const {
  if (!(confidence_threshold > 0.0 && confidence_threshold <= 1.0))
    throw ValidationError("confidence threshold must be in (0, 1]");
  if (crop_side < 8) throw ValidationError("crop side must be at least 8 pixels");
}

void validate_detection(const DetectionRecord& det) {
  const auto& b = det.bbox;
  const auto fail = [&](const std::string& what) {
    throw ValidationError("image '" + det.image_id + "': " + what);
  };
  if (!(std::isfinite(b.x_min) && std::isfinite(b.y_min) && std::isfinite(b.width) &&
        std::isfinite(b.height)))
    fail("bbox has non-finite coordinates");
  if (b.x_min < 0 || b.y_min < 0) fail("bbox origin is negative");
  if (!(b.width > 0) || !(b.height > 0)) fail("bbox has non-positive extent");
  if (b.x_min + b.width > 1.0) fail("bbox exceeds the right edge (x_min + width > 1)");
  if (b.y_min + b.height > 1.0) fail("bbox exceeds the bottom edge (y_min + height > 1)");
  if (!(det.confidence >= 0 && det.confidence <= 1)) fail("confidence outside [0, 1]");
}

std::string image_id_from_path(std::string_view file) {
  std::string id(file);
  const auto slash = id.find_last_of("/\\");
  const auto dot = id.find_last_of('.');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) id.resize(dot);
  std::replace(id.begin(), id.end(), '/', '_');
  std::replace(id.begin(), id.end(), '\\', '_');
  return id;
}

std::vector<ParsedImage> parse_detection_file(std::string_view bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError("detection file: malformed JSON at byte offset " + std::to_string(e.byte) + ": " +
                     e.what());
  }
  if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array())
    throw ParseError("detection file: expected a top-level object with an \"images\" array");

  std::vector<ParsedImage> out;
  const auto& images = doc["images"];
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    const std::string where = "detection file: images[" + std::to_string(i) + "]";
    if (!img.is_object() || !img.contains("file") || !img["file"].is_string())
      throw ParseError(where + ": missing string field \"file\"");
    ImageEntry entry;
    entry.source_path = img["file"].get<std::string>();
    entry.image_id = image_id_from_path(entry.source_path);
    if (img.contains("sequence_id") && img["sequence_id"].is_string())
      entry.sequence_id = img["sequence_id"].get<std::string>();

    DetectionList dets;
    if (!img.contains("detections") || !img["detections"].is_array())
      throw ParseError(where + ": missing array field \"detections\"");
    const auto& arr = img["detections"];
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const auto& d = arr[k];
      const std::string dwhere = where + ".detections[" + std::to_string(k) + "]";
      if (!d.is_object() || !d.contains("conf") || !d["conf"].is_number() || !d.contains("bbox") ||
          !d["bbox"].is_array() || d["bbox"].size() != 4)
        throw ParseError(dwhere + ": expected {\"conf\": number, \"bbox\": [4 numbers]}");
      for (const auto& v : d["bbox"])
        if (!v.is_number()) throw ParseError(dwhere + ": bbox entries must be numbers");
      DetectionRecord rec;
      rec.image_id = entry.image_id;
      if (d.contains("category")) {
        const auto& c = d["category"];
        rec.category = c.is_string() ? c.get<std::string>() : c.dump();
      }
      rec.confidence = d["conf"].get<double>();
      rec.bbox = {d["bbox"][0].get<double>(), d["bbox"][1].get<double>(), d["bbox"][2].get<double>(),
                  d["bbox"][3].get<double>()};
      validate_detection(rec);
      dets.push_back(std::move(rec));
    }
    out.emplace_back(std::move(entry), std::move(dets));
  }
  return out;
}

DetectionList filter_detections(const DetectionList& dets, const IngestConfig& cfg) {
  DetectionList kept;
  std::copy_if(dets.begin(), dets.end(), std::back_inserter(kept),
               [&](const DetectionRecord& d) { return d.confidence >= cfg.confidence_threshold; });
  return kept;
}

Occupancy classify_empty(const DetectionList& dets, const IngestConfig& cfg) {
  return count_animals(dets, cfg) > 0 ? Occupancy::Animal : Occupancy::Empty;
}

int count_animals(const DetectionList& dets, const IngestConfig& cfg) {
  return static_cast<int>(std::count_if(dets.begin(), dets.end(), [&](const DetectionRecord& d) {
    return d.confidence >= cfg.confidence_threshold;
  }));
}

CountBin CountBin::of(long count) {
  if (count < 1) throw DomainError("bin_count: count must be at least 1, got " + std::to_string(count));
  if (count <= 10) return CountBin(static_cast<int>(count - 1));
  if (count <= 50) return CountBin(10);
  return CountBin(11);
}

std::string CountBin::name() const {
  if (index_ < 10) return std::to_string(index_ + 1);
  return index_ == 10 ? "11-50" : "51+";
}

PixelRect to_pixel_rect(const BoundingBox& bbox, ImageSize size) {
  if (size.width <= 0 || size.height <= 0) throw DomainError("image has non-positive dimensions");
  const auto round_half_up = [](double v) { return static_cast<int>(std::floor(v + 0.5)); };
  PixelRect r{round_half_up(bbox.x_min * size.width), round_half_up(bbox.y_min * size.height),
              round_half_up(bbox.width * size.width), round_half_up(bbox.height * size.height)};
  r.x = std::clamp(r.x, 0, size.width);
  r.y = std::clamp(r.y, 0, size.height);
  r.width = std::min(r.width, size.width - r.x);
  r.height = std::min(r.height, size.height - r.y);
  if (r.width <= 0 || r.height <= 0)
    throw DomainError("degenerate crop: box rounds to zero pixel area");
  return r;
}

Crop crop_and_resize(const RgbImage& image, const BoundingBox& bbox, const IngestConfig& cfg) {
  cfg.validate();
  if (image.empty()) throw DomainError("crop_and_resize: empty image");
  Crop crop;
  crop.source = to_pixel_rect(bbox, image.size());
  const RgbImage region =
      extract_region(image, crop.source.x, crop.source.y, crop.source.width, crop.source.height);
  crop.pixels = resize_bilinear(region, cfg.crop_side, cfg.crop_side);
  return crop;
}

BinaryMetrics binary_metrics(const ConfusionCounts& c) {
  const auto total = c.total();
  if (total == 0) throw DomainError("binary_metrics: confusion matrix is empty");
  BinaryMetrics m;
  m.accuracy = static_cast<double>(c.true_positive + c.true_negative) / static_cast<double>(total);
  if (const auto p = c.true_positive + c.false_positive; p > 0)
    m.precision = static_cast<double>(c.true_positive) / static_cast<double>(p);
  if (const auto r = c.true_positive + c.false_negative; r > 0)
    m.recall = static_cast<double>(c.true_positive) / static_cast<double>(r);
  return m;
}

CountMetrics count_metrics(const std::vector<long>& predicted, const std::vector<long>& truth) {
  if (predicted.size() != truth.size())
    throw ValidationError("count_metrics: " + std::to_string(predicted.size()) + " predictions vs " +
                          std::to_string(truth.size()) + " ground-truth counts");
  if (truth.empty()) throw DomainError("count_metrics: no counts to compare");
  std::size_t exact = 0;
  std::size_t near = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int a = bin_count(predicted[i]).index();
    const int b = bin_count(truth[i]).index();
    exact += a == b;
    near += std::abs(a - b) <= 1;
  }
  const double n = static_cast<double>(truth.size());
  return {static_cast<double>(exact) / n, static_cast<double>(near) / n};
}

namespace {

bool parse_bool_field(const std::string& s) {
  if (s == "1" || s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "0" || s == "false" || s == "False" || s == "FALSE" || s.empty()) return false;
  throw ParseError("expected a boolean, got '" + s + "'");
}

}  // namespace

std::vector<std::pair<std::string, GroundTruth>> parse_ground_truth_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError("ground truth: empty file");
  const auto header = split_csv_line(lines[0]);
  if (header.size() < 4 || header[0] != "image_id" || header[1] != "label" || header[2] != "count" ||
      header[3] != "empty")
    throw ParseError("ground truth: header must be image_id,label,count,empty");
  std::vector<std::pair<std::string, GroundTruth>> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_csv_line(lines[i]);
    if (f.size() < 4) throw ParseError("ground truth: line " + std::to_string(i + 1) + ": expected 4 fields");
    GroundTruth g;
    g.label = f[1];
    try {
      g.count = f[2].empty() ? 0 : std::stoi(f[2]);
      g.empty = parse_bool_field(f[3]);
    } catch (const std::exception& e) {
      throw ParseError("ground truth: line " + std::to_string(i + 1) + ": " + e.what());
    }
    if (!g.empty && g.count < 1)
      throw ValidationError("ground truth: image '" + f[0] + "' is non-empty but has count < 1");
    out.emplace_back(f[0], std::move(g));
  }
  return out;
}

}  // namespace traplab

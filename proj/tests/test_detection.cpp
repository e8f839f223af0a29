#include "traplab/detection.hpp"

#include "test_util.hpp"

using namespace traplab;

namespace {

DetectionList dets_with(std::initializer_list<double> confidences) {
  DetectionList out;
  for (const double c : confidences) out.push_back({"img", "1", {0.1, 0.1, 0.2, 0.2}, c});
  return out;
}

std::vector<double> confidences(const DetectionList& dets) {
  std::vector<double> out;
  for (const auto& d : dets) out.push_back(d.confidence);
  return out;
}

}  // namespace

TEST_SUITE("detection") {
  TEST_CASE("parsing keeps every detection in file order") {
    const auto parsed = parse_detection_file(R"({"images": [{"file": "site1/cam2/IMG_001.JPG", "detections": [
      {"category": "1", "conf": 0.95, "bbox": [0.1, 0.2, 0.3, 0.4]},
      {"category": "1", "conf": 0.30, "bbox": [0.5, 0.5, 0.1, 0.1]}]}]})");
    REQUIRE(parsed.size() == 1);
    CHECK(parsed[0].first.image_id == "site1_cam2_IMG_001");
    CHECK(parsed[0].first.source_path == "site1/cam2/IMG_001.JPG");
    CHECK(confidences(parsed[0].second) == std::vector<double>{0.95, 0.30});
    CHECK(parsed[0].second[0].bbox.height == doctest::Approx(0.4));
  }

  TEST_CASE("empty image list parses to nothing") {
    CHECK(parse_detection_file(R"({"images": []})").empty());
  }

  TEST_CASE("box past the right edge is rejected naming the image") {
    try {
      parse_detection_file(R"({"images": [{"file": "a/b.jpg", "detections": [{"conf": 0.9, "bbox": [0.7, 0.1, 0.5, 0.2]}]}]})");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("a_b") != std::string::npos);
    }
  }

  TEST_CASE("malformed JSON reports a byte offset") {
    try {
      parse_detection_file(R"({"images": [{"file": "x.jpg", "detections": [}]})");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_detection_file(R"({"pictures": []})"), ParseError);
    CHECK_THROWS_AS(parse_detection_file(R"({"images": [{"file": "x.jpg", "detections": [{"conf": 0.5}]}]})"),
                    ParseError);
  }

  TEST_CASE("confidence outside [0,1] is invalid") {
    CHECK_THROWS_AS(validate_detection({"i", "1", {0.1, 0.1, 0.1, 0.1}, 1.2}), ValidationError);
    CHECK_THROWS_AS(validate_detection({"i", "1", {0.1, 0.1, 0.0, 0.1}, 0.5}), ValidationError);
    CHECK_NOTHROW(validate_detection({"i", "1", {0.0, 0.0, 1.0, 1.0}, 1.0}));
  }

  TEST_CASE("threshold filtering") {
    const IngestConfig cfg;
    CHECK(confidences(filter_detections(dets_with({0.95, 0.30, 0.91}), cfg)) == std::vector<double>{0.95, 0.91});
    CHECK(filter_detections(dets_with({0.89}), cfg).empty());
    CHECK(confidences(filter_detections(dets_with({0.90}), cfg)) == std::vector<double>{0.90});
  }

  TEST_CASE("empty classification and counting") {
    const IngestConfig cfg;
    CHECK(classify_empty(dets_with({0.95, 0.30}), cfg) == Occupancy::Animal);
    CHECK(classify_empty({}, cfg) == Occupancy::Empty);
    CHECK(classify_empty(dets_with({0.89, 0.85}), cfg) == Occupancy::Empty);
    CHECK(count_animals(dets_with({0.95, 0.92, 0.40}), cfg) == 2);
    CHECK(count_animals({}, cfg) == 0);
    DetectionList twelve(12, {"img", "1", {0.1, 0.1, 0.2, 0.2}, 0.99});
    CHECK(count_animals(twelve, cfg) == 12);
  }

  TEST_CASE("filter properties hold on random lists") {
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
      DetectionList dets;
      const auto n = uniform_index(rng, 15);
      for (std::uint64_t k = 0; k < n; ++k) dets.push_back({"img", "1", {0.1, 0.1, 0.2, 0.2}, uniform01(rng)});
      const IngestConfig lo{0.05 + 0.9 * uniform01(rng), 256};
      const IngestConfig hi{lo.confidence_threshold + (1.0 - lo.confidence_threshold) * uniform01(rng), 256};
      const auto kept = filter_detections(dets, lo);
      CHECK(count_animals(dets, lo) == static_cast<int>(kept.size()));
      CHECK((classify_empty(dets, lo) == Occupancy::Animal) == (count_animals(dets, lo) > 0));
      CHECK(confidences(filter_detections(kept, lo)) == confidences(kept));
      // A higher threshold keeps an order-preserving subsequence.
      const auto strict = filter_detections(dets, hi);
      std::size_t j = 0;
      for (const auto& d : kept)
        if (j < strict.size() && strict[j].confidence == d.confidence) ++j;
      CHECK(j == strict.size());
    }
  }

  TEST_CASE("ingest config validation") {
    CHECK_NOTHROW(IngestConfig{}.validate());
    CHECK_NOTHROW((IngestConfig{1.0, 256}.validate()));
    CHECK_THROWS_AS((IngestConfig{0.0, 256}.validate()), ValidationError);
    CHECK_THROWS_AS((IngestConfig{0.9, 7}.validate()), ValidationError);
  }

  TEST_CASE("count bins") {
    CHECK(bin_count(7).name() == "7");
    CHECK(bin_count(23).name() == "11-50");
    CHECK(bin_count(51).name() == "51+");
    CHECK(bin_count(10).name() == "10");
    CHECK(bin_count(11).name() == "11-50");
    CHECK(bin_count(50).name() == "11-50");
    CHECK_THROWS_AS(bin_count(0), DomainError);
    // Exact partition of [1, 200]: singletons 1..10, then [11,50], then [51,inf).
    for (long c = 1; c <= 200; ++c) {
      const int expect = c <= 10 ? static_cast<int>(c - 1) : (c <= 50 ? 10 : 11);
      CHECK(bin_count(c).index() == expect);
    }
    CHECK(bin_count(1'000'000'000L).index() == 11);
  }

  TEST_CASE("pixel rectangle arithmetic") {
    CHECK(to_pixel_rect({0.25, 0.25, 0.5, 0.5}, {400, 400}) == PixelRect{100, 100, 200, 200});
    CHECK_THROWS_AS(to_pixel_rect({0.5, 0.5, 0.001, 0.001}, {100, 100}), DomainError);
  }

  TEST_CASE("crops are resized to the configured side") {
    RgbImage gray(400, 300, 128);
    const IngestConfig cfg;
    const Crop crop = crop_and_resize(gray, {0.25, 0.25, 0.5, 0.5}, cfg);
    CHECK(crop.source == PixelRect{100, 75, 200, 150});
    CHECK(crop.pixels.width() == 256);
    CHECK(crop.pixels.height() == 256);
    CHECK(std::all_of(crop.pixels.data().begin(), crop.pixels.data().end(), [](auto v) { return v == 128; }));

    const Crop small = crop_and_resize(gray, {0.0, 0.0, 0.05, 0.9}, cfg);
    CHECK(small.pixels.width() == 256);
    CHECK(small.pixels.height() == 256);
  }

  TEST_CASE("whole-image box at crop side is the identity") {
    Rng rng(3);
    RgbImage img(256, 256);
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
    const Crop crop = crop_and_resize(img, {0.0, 0.0, 1.0, 1.0}, IngestConfig{});
    CHECK(crop.pixels == img);
  }

  TEST_CASE("binary metrics reproduce the detector confusion matrix") {
    const auto m = binary_metrics({714'276, 131'288, 2'219'404, 133'769});
    REQUIRE(m.precision);
    REQUIRE(m.recall);
    CHECK(std::abs(m.accuracy - 0.9171) <= 5e-4);
    CHECK(std::abs(*m.precision - 0.8447) <= 5e-4);
    CHECK(std::abs(*m.recall - 0.8423) <= 5e-4);
  }

  TEST_CASE("binary metrics degenerate cases") {
    const auto perfect = binary_metrics({1, 0, 1, 0});
    CHECK(perfect.accuracy == 1.0);
    CHECK(*perfect.precision == 1.0);
    CHECK(*perfect.recall == 1.0);
    const auto none = binary_metrics({0, 0, 5, 5});
    CHECK(none.accuracy == 0.5);
    CHECK_FALSE(none.precision.has_value());
    CHECK(*none.recall == 0.0);
    CHECK_THROWS_AS(binary_metrics({0, 0, 0, 0}), DomainError);
  }

  TEST_CASE("count metrics compare bin ordinals") {
    auto m = count_metrics({3}, {3});
    CHECK(m.top1_accuracy == 1.0);
    CHECK(m.within_one_bin_accuracy == 1.0);
    m = count_metrics({4}, {3});
    CHECK(m.top1_accuracy == 0.0);
    CHECK(m.within_one_bin_accuracy == 1.0);
    m = count_metrics({12}, {3});
    CHECK(m.top1_accuracy == 0.0);
    CHECK(m.within_one_bin_accuracy == 0.0);
    // 12 and 40 share the 11-50 bin; 10 and 11 are adjacent bins.
    m = count_metrics({12, 10}, {40, 11});
    CHECK(m.top1_accuracy == 0.5);
    CHECK(m.within_one_bin_accuracy == 1.0);
    CHECK_THROWS_AS(count_metrics({1, 2}, {1}), ValidationError);
  }

  TEST_CASE("ground truth CSV") {
    const auto rows = parse_ground_truth_csv("image_id,label,count,empty\na,zebra,3,false\nb,,0,true\n");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].first == "a");
    CHECK(rows[0].second.label == "zebra");
    CHECK(rows[0].second.count == 3);
    CHECK_FALSE(rows[0].second.empty);
    CHECK(rows[1].second.empty);
    CHECK_THROWS(parse_ground_truth_csv("image_id,label,count,empty\na,zebra,0,false\n"));
  }
}

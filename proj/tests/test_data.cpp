#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "piseg/costvol.hpp"
#include "piseg/data.hpp"
#include "piseg/encoders.hpp"
#include "piseg/eval.hpp"
#include "support/test_support.hpp"

using namespace piseg;
using piseg::testing::slurp;
using piseg::testing::spit;
using piseg::testing::TempDir;

namespace {

// Two 4x4 masks over raw classes {0: low, 1: high, 2: car, 3: noise}.
DatasetManifest write_toy(const std::filesystem::path& dir) {
  DatasetManifest m;
  m.dataset_id = "toy";
  m.categories = {"low", "high", "car", "noise"};
  m.native_width = 4;
  m.native_height = 4;
  for (int i = 0; i < 2; ++i) {
    SegmentationMap mask(4, 4);
    for (int p = 0; p < 16; ++p) mask.labels[static_cast<size_t>(p)] = static_cast<std::uint8_t>((p + i) % 4);
    mask.labels[0] = kIgnoreIndex;
    const std::string stem = std::to_string(i);
    write_mask(mask, dir / "masks" / (stem + ".png"));
    write_image(Image(4, 4, 0.5), dir / "images" / (stem + ".png"));
    m.samples.push_back({"images/" + stem + ".png", "masks/" + stem + ".png"});
  }
  write_manifest(m, dir / "manifest.json");
  return load_manifest(dir / "manifest.json");
}

std::vector<std::uint64_t> total_histogram(const DatasetManifest& m) {
  std::vector<std::uint64_t> total(static_cast<size_t>(m.num_classes()), 0);
  for (size_t i = 0; i < m.samples.size(); ++i) {
    const auto h = class_histogram(load_sample_mask(m, i), m.num_classes());
    for (size_t c = 0; c < h.size(); ++c) total[c] += h[c];
  }
  return total;
}

}  // namespace

TEST_CASE("manifest round trip is byte-identical") {
  TempDir dir("manifest");
  const auto m = write_toy(dir.path());
  CHECK(m.num_classes() == 4);
  const std::string first = slurp(dir.path() / "manifest.json");
  write_manifest(m, dir.path() / "again.json");
  CHECK(slurp(dir.path() / "again.json") == first);
  CHECK(first == canonical_manifest(m));
}

TEST_CASE("manifest rejections") {
  TempDir dir("manifest-bad");
  auto m = write_toy(dir.path());
  SegmentationMap bad(4, 4, 4);
  write_mask(bad, dir.path() / "masks" / "1.png");
  try {
    load_manifest(dir.path() / "manifest.json");
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("1.png") != std::string::npos);
  }
  const auto lazy = load_manifest(dir.path() / "manifest.json", MaskScan::kLazy);
  CHECK_NOTHROW(load_sample_mask(lazy, 0));
  CHECK_THROWS_AS(load_sample_mask(lazy, 1), Error);
  const auto report = validate_manifest(dir.path() / "manifest.json");
  CHECK_FALSE(report.ok());

  auto dup = m;
  dup.categories = {"a", "a", "b", "c"};
  CHECK_THROWS_AS(check_manifest_structure(dup), Error);
  auto empty = m;
  empty.samples.clear();
  CHECK_THROWS_AS(check_manifest_structure(empty), Error);

  auto j = manifest_to_json(m);
  j["unexpected"] = 1;
  CHECK_THROWS_AS(manifest_from_json(j), Error);

  std::filesystem::remove(dir.path() / "images" / "0.png");
  const auto missing = validate_manifest(dir.path() / "manifest.json");
  CHECK(missing.issues.size() >= 2);
}

TEST_CASE("taxonomy merge adds pixel counts and DROP ignores") {
  TempDir dir("taxonomy");
  const auto m = write_toy(dir.path());
  const auto before = total_histogram(m);
  const auto mapping = parse_taxonomy("# toy\nlow\tvegetation\nhigh\tvegetation\ncar\tcar\nnoise\tDROP\n");
  const std::vector<std::string> vocab = {"building", "car", "vegetation"};
  const auto mapped = map_taxonomy(m, mapping, vocab);
  CHECK(mapped.categories == std::vector<std::string>{"car", "vegetation"});
  const auto after = total_histogram(mapped);
  CHECK(after[1] == before[0] + before[1]);
  CHECK(after[0] == before[2]);

  std::uint64_t ignored = 0, kept_before = 0, kept_after = 0;
  for (size_t i = 0; i < mapped.samples.size(); ++i) {
    const auto mask = load_sample_mask(mapped, i);
    for (auto v : mask.labels) ignored += v == kIgnoreIndex;
  }
  for (size_t c = 0; c < 3; ++c) kept_before += before[c];
  for (auto v : after) kept_after += v;
  CHECK(kept_after == kept_before);
  CHECK(ignored == 2 + before[3]);

  // Dropped pixels do not reach the confusion matrix.
  ConfusionMatrix cm(mapped.num_classes());
  for (size_t i = 0; i < mapped.samples.size(); ++i) {
    const auto mask = load_sample_mask(mapped, i);
    accumulate_confusion(cm, mask, mask);
  }
  CHECK(cm.ignored == ignored);

  write_manifest(mapped, dir.path() / "mapped.json");
  const auto reloaded = load_manifest(dir.path() / "mapped.json");
  CHECK(total_histogram(reloaded) == after);

  const auto partial = parse_taxonomy("low\tvegetation\n");
  try {
    map_taxonomy(m, partial, vocab);
    FAIL("expected rejection");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("high") != std::string::npos);
    CHECK(msg.find("noise") != std::string::npos);
  }
  CHECK_THROWS_AS(map_taxonomy(m, parse_taxonomy("low\tsky\nhigh\tcar\ncar\tcar\nnoise\tcar\n"), vocab), Error);
}

TEST_CASE("identity mapping keeps labels") {
  TempDir dir("identity");
  const auto m = write_toy(dir.path());
  const auto mapped =
      map_taxonomy(m, parse_taxonomy("low\tlow\nhigh\thigh\ncar\tcar\nnoise\tnoise\n"), m.categories);
  CHECK(mapped.categories == m.categories);
  for (size_t i = 0; i < m.samples.size(); ++i) CHECK(load_sample_mask(mapped, i) == load_sample_mask(m, i));
}

TEST_CASE("taxonomy and vocabulary files round trip") {
  TempDir dir("tables");
  TaxonomyMapping t;
  t.entries = {{"Low Vegetation", "vegetation"}, {"clutter", "DROP"}};
  write_taxonomy(t, dir.path() / "t.tsv");
  CHECK(read_taxonomy(dir.path() / "t.tsv").entries == t.entries);
  const std::vector<std::string> vocab = {"road", "low vegetation"};
  write_vocabulary(vocab, dir.path() / "v.txt");
  CHECK(read_vocabulary(dir.path() / "v.txt") == vocab);
  CHECK_THROWS_AS(parse_taxonomy("no tab here\n"), Error);
}

TEST_CASE("overlap arithmetic") {
  const auto r = overlap_report({"a", "b", "c"}, "test", {"b", "c", "d", "e"});
  CHECK(r.raw_unique == 4);
  CHECK(r.covered == 2);
  CHECK(r.test_only == 2);
  CHECK(r.coverage_ratio == 0.5);
  CHECK(r.test_only_names == std::vector<std::string>{"d", "e"});

  const auto subset = overlap_report({"a", "b", "c"}, "s", {"a", "b"});
  CHECK(subset.coverage_ratio == 1.0);
  CHECK(subset.test_only == 0);
  const auto disjoint = overlap_report({"a"}, "d", {"x", "y"});
  CHECK(disjoint.coverage_ratio == 0.0);
  CHECK(disjoint.covered + disjoint.test_only == disjoint.raw_unique);
}

TEST_CASE("rectangle rasterization matches the drawn area") {
  Shape s{ShapeKind::kRectangle, 2, 3, 5, 7, 4};
  SegmentationMap mask(16, 16);
  rasterize(s, mask, nullptr);
  int count = 0;
  for (auto v : mask.labels) count += v == 2;
  CHECK(count == 7 * 4);
  CHECK(mask.at(5, 3) == 2);
  CHECK(mask.at(8, 9) == 2);
  CHECK(mask.at(9, 9) == 0);
  CHECK(mask.at(5, 10) == 0);

  Shape clipped{ShapeKind::kRectangle, 1, 12, 12, 8, 8};
  SegmentationMap m2(16, 16);
  rasterize(clipped, m2, nullptr);
  int c2 = 0;
  for (auto v : m2.labels) c2 += v == 1;
  CHECK(c2 == 16);

  Shape e{ShapeKind::kEllipse, 1, 0, 0, 8, 8};
  int inside = 0;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) inside += shape_contains(e, y, x);
  }
  CHECK(inside > 32);
  CHECK(inside < 64);
  CHECK_FALSE(shape_contains(e, 0, 0));
}

TEST_CASE("synthetic generation") {
  TempDir dir("synth");
  SyntheticSpec spec;
  spec.num_images = 3;
  spec.size = 16;
  spec.num_classes = 4;
  spec.seed = 11;

  SUBCASE("zero shapes give all-background masks") {
    spec.shapes_per_image = 0;
    const auto out = generate_synthetic_dataset(spec, dir.path() / "z");
    const auto m = load_manifest(out.train_manifest);
    for (size_t i = 0; i < m.samples.size(); ++i) {
      for (auto v : load_sample_mask(m, i).labels) CHECK(v == 0);
    }
  }

  SUBCASE("same seed gives byte-identical files") {
    generate_synthetic_dataset(spec, dir.path() / "a");
    generate_synthetic_dataset(spec, dir.path() / "b");
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir.path() / "a")) {
      if (!entry.is_regular_file()) continue;
      const auto rel = std::filesystem::relative(entry.path(), dir.path() / "a");
      CHECK(slurp(entry.path()) == slurp(dir.path() / "b" / rel));
    }
    spec.seed = 12;
    generate_synthetic_dataset(spec, dir.path() / "c");
    CHECK(slurp(dir.path() / "a" / "masks" / "0000.png") != slurp(dir.path() / "c" / "masks" / "0000.png"));
  }

  SUBCASE("holdout classes appear only in test images") {
    spec.num_classes = 6;
    spec.holdout = 2;
    spec.num_images = 6;
    spec.test_images = 4;
    const auto out = generate_synthetic_dataset(spec, dir.path() / "h");
    REQUIRE(out.test_manifest.has_value());
    const auto train = load_manifest(out.train_manifest);
    const auto test = load_manifest(*out.test_manifest);
    for (size_t i = 0; i < train.samples.size(); ++i) {
      for (auto v : load_sample_mask(train, i).labels) CHECK(v < 4);
    }
    for (size_t i = 0; i < test.samples.size(); ++i) {
      const auto h = class_histogram(load_sample_mask(test, i), 6);
      CHECK(h[4] + h[5] > 0);
    }
    REQUIRE(test.split.has_value());
    CHECK(test.split->unseen.size() == 2);
  }

  SUBCASE("too many classes are rejected") {
    spec.num_classes = kMaxSyntheticClasses + 1;
    CHECK_THROWS_AS(generate_synthetic_dataset(spec, dir.path() / "x"), Error);
    spec.num_classes = 4;
    spec.size = 18;
    CHECK_THROWS_AS(generate_synthetic_dataset(spec, dir.path() / "y"), Error);
  }
}

TEST_CASE("synthetic classes are separable under the synthetic encoder") {
  std::set<Rgb8> colors;
  for (int c = 0; c < kMaxSyntheticClasses; ++c) colors.insert(synthetic_class_color(c));
  CHECK(colors.size() == static_cast<size_t>(kMaxSyntheticClasses));

  const int classes = 40;
  std::vector<Mat> features;
  for (int c = 0; c < classes; ++c) {
    Image img(4, 4);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) img.set_pixel(y, x, synthetic_class_color(c));
    }
    features.push_back(encode_image_synthetic(img, 64, 4, "ns").tensor);
  }
  int pairs = 0, separated = 0;
  for (int a = 0; a < classes; ++a) {
    for (int b = a + 1; b < classes; ++b) {
      const Mat cos = cost_volume_apply(features[static_cast<size_t>(a)], features[static_cast<size_t>(b)], kCosineEps);
      ++pairs;
      separated += std::abs(cos(0, 0)) < 0.9;
    }
  }
  CHECK(static_cast<double>(separated) / pairs >= 0.99);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "piseg/image.hpp"
#include "piseg/rng.hpp"

namespace piseg {

struct DatasetSample {
  std::string image;  // relative to the manifest root
  std::string mask;
  bool operator==(const DatasetSample&) const = default;
};

struct DatasetSplit {
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  bool operator==(const DatasetSplit&) const = default;
};

struct PaletteEntry {
  std::string name;
  Rgb8 rgb{};
  bool operator==(const PaletteEntry&) const = default;
};

/// One dataset. Masks on disk hold raw ids; when `label_map` is non-empty the
/// manifest has been taxonomy-mapped and raw id k loads as label_map[k]
/// (an index into `categories`, or 255 for dropped categories).
struct DatasetManifest {
  std::string dataset_id;
  std::string root = ".";
  std::vector<std::string> categories;
  double native_width = 0.0;
  double native_height = 0.0;
  std::uint8_t ignore_index = kIgnoreIndex;
  std::vector<DatasetSample> samples;
  std::optional<DatasetSplit> split;
  std::vector<PaletteEntry> palette;
  std::vector<std::string> raw_categories;
  std::vector<std::uint8_t> label_map;

  /// Directory the manifest was loaded from; `root` resolves against it.
  std::filesystem::path base_dir;

  int num_classes() const { return static_cast<int>(categories.size()); }
  bool mapped() const { return !label_map.empty(); }
  int num_raw_classes() const { return mapped() ? static_cast<int>(raw_categories.size()) : num_classes(); }
  std::filesystem::path image_path(size_t i) const;
  std::filesystem::path mask_path(size_t i) const;
};

/// Structural checks only (names, sizes, map consistency); no file access.
void check_manifest_structure(const DatasetManifest& manifest);

DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
nlohmann::json manifest_to_json(const DatasetManifest& manifest);
/// Two-space indented JSON with a trailing newline.
std::string canonical_manifest(const DatasetManifest& manifest);

struct ManifestIssue {
  std::string file;
  std::string message;
};

struct ValidationReport {
  std::string dataset_id;
  size_t num_samples = 0;
  int num_classes = 0;
  std::vector<std::uint64_t> class_pixels;  // per raw class id
  std::uint64_t ignored_pixels = 0;
  std::vector<ManifestIssue> issues;

  bool ok() const { return issues.empty(); }
  nlohmann::json to_json() const;
};

/// Loads `path` and checks every referenced file, collecting all problems.
ValidationReport validate_manifest(const std::filesystem::path& path);

enum class MaskScan { kEager, kLazy };

/// Eager loading scans every mask up front and rejects the manifest on the
/// first bad file; lazy loading defers mask checks to load_sample_mask.
DatasetManifest load_manifest(const std::filesystem::path& path, MaskScan scan = MaskScan::kEager);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

Image load_sample_image(const DatasetManifest& manifest, size_t i);
/// Reads, range-checks and (if mapped) relabels the i-th mask.
SegmentationMap load_sample_mask(const DatasetManifest& manifest, size_t i);

std::vector<std::uint64_t> class_histogram(const SegmentationMap& mask, int num_classes);

// Taxonomy tables: UTF-8 text, one "raw<TAB>unified" pair per line, '#'
// comments and blank lines ignored. A unified name of DROP sends the raw
// category to the ignore label.
inline constexpr const char* kDropCategory = "DROP";

struct TaxonomyMapping {
  std::map<std::string, std::string> entries;
};

TaxonomyMapping parse_taxonomy(const std::string& text);
TaxonomyMapping read_taxonomy(const std::filesystem::path& path);
void write_taxonomy(const TaxonomyMapping& mapping, const std::filesystem::path& path);

/// One category name per line; blank lines and '#' comments ignored.
std::vector<std::string> parse_vocabulary(const std::string& text);
std::vector<std::string> read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const std::vector<std::string>& vocab, const std::filesystem::path& path);

/// Relabels `manifest` onto the unified vocabulary. The resulting category
/// list holds the unified names actually targeted, in vocabulary order.
DatasetManifest map_taxonomy(const DatasetManifest& manifest, const TaxonomyMapping& mapping,
                             const std::vector<std::string>& vocab);

struct OverlapReport {
  std::string dataset_id;
  int raw_unique = 0;
  int covered = 0;
  int test_only = 0;
  double coverage_ratio = 0.0;
  std::vector<std::string> test_only_names;

  nlohmann::json to_json() const;
};

OverlapReport overlap_report(const std::set<std::string>& train_vocab, const std::string& dataset_id,
                             const std::set<std::string>& test_categories);
/// Test categories are the (mapped) manifest categories.
std::vector<OverlapReport> overlap_report(const std::set<std::string>& train_vocab,
                                          const std::vector<DatasetManifest>& test_manifests);

// Synthetic data.

struct SyntheticSpec {
  std::string dataset_id = "synthetic";
  int num_images = 32;
  int test_images = 16;  // only used with a holdout
  int size = 64;
  int num_classes = 4;  // including background (class 0)
  int shapes_per_image = 3;
  int holdout = 0;  // last `holdout` classes appear only in test images
  int patch_stride = 4;
  bool ellipses = false;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class ShapeKind { kRectangle, kEllipse };

/// Axis-aligned shape covering [x, x + width) x [y, y + height).
struct Shape {
  ShapeKind kind = ShapeKind::kRectangle;
  int label = 0;
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

/// Pixel-center membership test.
bool shape_contains(const Shape& shape, int y, int x);
/// Paints `shape` into the mask and, if given, the image.
void rasterize(const Shape& shape, SegmentationMap& mask, Image* image);

inline constexpr int kMaxSyntheticClasses = 125;

/// Distinct flat color per class drawn from a 5-level RGB lattice.
Rgb8 synthetic_class_color(int label);
std::vector<std::string> synthetic_class_names(int num_classes);

/// Shapes for one image. Labels are drawn from `labels`; if `required` is
/// set, the last shape carries it so it is never painted over.
std::vector<Shape> sample_shapes(const SyntheticSpec& spec, const std::vector<int>& labels,
                                 std::optional<int> required, Rng& rng);

struct SyntheticOutput {
  std::filesystem::path train_manifest;
  std::optional<std::filesystem::path> test_manifest;
};

/// Writes images, masks and manifests under `out_dir`. Without a holdout a
/// single manifest.json is written; with one, train/ and test/ subsets.
SyntheticOutput generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace piseg

#include "piseg/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace piseg {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path DatasetManifest::image_path(size_t i) const { return base_dir / root / samples.at(i).image; }
fs::path DatasetManifest::mask_path(size_t i) const { return base_dir / root / samples.at(i).mask; }

void check_manifest_structure(const DatasetManifest& m) {
  PISEG_CHECK(!m.dataset_id.empty(), "manifest has an empty dataset_id");
  PISEG_CHECK(!m.categories.empty(), "manifest " << m.dataset_id << " has no categories");
  PISEG_CHECK(m.categories.size() <= 255, "manifest " << m.dataset_id << " has " << m.categories.size()
                                                      << " categories; at most 255 fit an 8-bit mask");
  std::set<std::string> names;
  for (const auto& c : m.categories) {
    PISEG_CHECK(!c.empty(), "manifest " << m.dataset_id << " has an empty category name");
    PISEG_CHECK(names.insert(c).second, "manifest " << m.dataset_id << " lists category '" << c << "' twice");
  }
  PISEG_CHECK(!m.samples.empty(), "manifest " << m.dataset_id << " has no samples");
  PISEG_CHECK(m.native_width > 0.0 && m.native_height > 0.0,
              "manifest " << m.dataset_id << " needs a positive native_resolution");
  PISEG_CHECK(static_cast<int>(m.ignore_index) >= m.num_raw_classes(),
              "ignore_index " << int(m.ignore_index) << " collides with a class id");
  if (m.split) {
    std::set<std::string> seen(m.split->seen.begin(), m.split->seen.end());
    for (const auto* list : {&m.split->seen, &m.split->unseen}) {
      for (const auto& c : *list) {
        PISEG_CHECK(names.count(c), "split class '" << c << "' is not a category of " << m.dataset_id);
      }
    }
    for (const auto& c : m.split->unseen) {
      PISEG_CHECK(!seen.count(c), "class '" << c << "' is both seen and unseen in " << m.dataset_id);
    }
  }
  if (m.mapped()) {
    PISEG_CHECK(m.label_map.size() == m.raw_categories.size(),
                "label_map has " << m.label_map.size() << " entries for " << m.raw_categories.size()
                                 << " raw categories");
    for (auto id : m.label_map) {
      PISEG_CHECK(id == m.ignore_index || id < m.categories.size(),
                  "label_map target " << int(id) << " is out of range");
    }
  } else {
    PISEG_CHECK(m.raw_categories.empty(), "raw_categories given without a label_map");
  }
}

DatasetManifest manifest_from_json(const json& j, const fs::path& base_dir) {
  static const std::set<std::string> kKeys = {"dataset_id", "root",    "categories",     "native_resolution",
                                              "ignore_index", "samples", "split",        "palette",
                                              "raw_categories", "label_map"};
  PISEG_CHECK(j.is_object(), "manifest must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    PISEG_CHECK(kKeys.count(key), "unknown manifest key '" << key << "'");
  }
  DatasetManifest m;
  m.base_dir = base_dir;
  try {
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.root = j.value("root", std::string("."));
    m.categories = j.at("categories").get<std::vector<std::string>>();
    const auto res = j.at("native_resolution").get<std::vector<double>>();
    PISEG_CHECK(res.size() == 2, "native_resolution must be [width, height]");
    m.native_width = res[0];
    m.native_height = res[1];
    const int ignore = j.value("ignore_index", 255);
    PISEG_CHECK(ignore >= 0 && ignore <= 255, "ignore_index must fit in 8 bits");
    m.ignore_index = static_cast<std::uint8_t>(ignore);
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("image").get<std::string>(), s.at("mask").get<std::string>()});
    }
    if (j.contains("split")) {
      DatasetSplit split;
      split.seen = j["split"].at("seen").get<std::vector<std::string>>();
      split.unseen = j["split"].value("unseen", std::vector<std::string>{});
      m.split = split;
    }
    if (j.contains("palette")) {
      for (const auto& p : j["palette"]) {
        const auto rgb = p.at("rgb").get<std::vector<int>>();
        PISEG_CHECK(rgb.size() == 3, "palette rgb must have three components");
        PaletteEntry e;
        e.name = p.at("class").get<std::string>();
        for (int c = 0; c < 3; ++c) {
          PISEG_CHECK(rgb[c] >= 0 && rgb[c] <= 255, "palette component out of range for " << e.name);
          e.rgb[c] = static_cast<std::uint8_t>(rgb[c]);
        }
        m.palette.push_back(e);
      }
    }
    if (j.contains("raw_categories")) m.raw_categories = j["raw_categories"].get<std::vector<std::string>>();
    if (j.contains("label_map")) {
      for (int v : j["label_map"].get<std::vector<int>>()) {
        PISEG_CHECK(v >= 0 && v <= 255, "label_map entry " << v << " does not fit in 8 bits");
        m.label_map.push_back(static_cast<std::uint8_t>(v));
      }
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  check_manifest_structure(m);
  return m;
}

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["dataset_id"] = m.dataset_id;
  j["root"] = m.root;
  j["categories"] = m.categories;
  j["native_resolution"] = {m.native_width, m.native_height};
  j["ignore_index"] = int(m.ignore_index);
  j["samples"] = json::array();
  for (const auto& s : m.samples) j["samples"].push_back({{"image", s.image}, {"mask", s.mask}});
  if (m.split) j["split"] = {{"seen", m.split->seen}, {"unseen", m.split->unseen}};
  if (!m.palette.empty()) {
    j["palette"] = json::array();
    for (const auto& p : m.palette) {
      j["palette"].push_back({{"class", p.name}, {"rgb", {int(p.rgb[0]), int(p.rgb[1]), int(p.rgb[2])}}});
    }
  }
  if (m.mapped()) {
    j["raw_categories"] = m.raw_categories;
    std::vector<int> lm(m.label_map.begin(), m.label_map.end());
    j["label_map"] = lm;
  }
  return j;
}

std::string canonical_manifest(const DatasetManifest& m) { return manifest_to_json(m).dump(2) + "\n"; }

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  PISEG_CHECK(in, "cannot read " << path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  PISEG_CHECK(out, "cannot write " << path.string());
  out << text;
  PISEG_CHECK(out, "failed while writing " << path.string());
}

DatasetManifest parse_manifest_file(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw Error("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

// Returns a message describing the first out-of-range value, or empty.
std::string check_mask_values(const DatasetManifest& m, const SegmentationMap& raw) {
  const int n = m.num_raw_classes();
  for (auto v : raw.labels) {
    if (v != m.ignore_index && v >= n) {
      return "mask value " + std::to_string(v) + " is out of range for " + std::to_string(n) + " classes";
    }
  }
  return {};
}

}  // namespace

json ValidationReport::to_json() const {
  json j;
  j["dataset_id"] = dataset_id;
  j["ok"] = ok();
  j["num_samples"] = num_samples;
  j["num_classes"] = num_classes;
  j["class_pixels"] = class_pixels;
  j["ignored_pixels"] = ignored_pixels;
  j["issues"] = json::array();
  for (const auto& i : issues) j["issues"].push_back({{"file", i.file}, {"message", i.message}});
  return j;
}

ValidationReport validate_manifest(const fs::path& path) {
  ValidationReport report;
  DatasetManifest m;
  try {
    m = parse_manifest_file(path);
  } catch (const Error& e) {
    report.issues.push_back({path.string(), e.what()});
    return report;
  }
  report.dataset_id = m.dataset_id;
  report.num_samples = m.samples.size();
  report.num_classes = m.num_classes();
  report.class_pixels.assign(static_cast<size_t>(m.num_raw_classes()), 0);
  for (size_t i = 0; i < m.samples.size(); ++i) {
    const auto img_path = m.image_path(i);
    const auto mask_path = m.mask_path(i);
    std::optional<Image> image;
    try {
      image = read_image(img_path);
    } catch (const Error& e) {
      report.issues.push_back({img_path.string(), e.what()});
    }
    try {
      const auto mask = read_mask(mask_path);
      if (auto msg = check_mask_values(m, mask); !msg.empty()) {
        report.issues.push_back({mask_path.string(), msg});
        continue;
      }
      if (image && (image->height != mask.height || image->width != mask.width)) {
        report.issues.push_back({mask_path.string(), "mask size differs from its image"});
      }
      for (auto v : mask.labels) {
        if (v == m.ignore_index) {
          ++report.ignored_pixels;
        } else {
          ++report.class_pixels[v];
        }
      }
    } catch (const Error& e) {
      report.issues.push_back({mask_path.string(), e.what()});
    }
  }
  return report;
}

DatasetManifest load_manifest(const fs::path& path, MaskScan scan) {
  DatasetManifest m = parse_manifest_file(path);
  for (size_t i = 0; i < m.samples.size(); ++i) {
    PISEG_CHECK(fs::exists(m.image_path(i)), "missing image file " << m.image_path(i).string());
    PISEG_CHECK(fs::exists(m.mask_path(i)), "missing mask file " << m.mask_path(i).string());
    if (scan == MaskScan::kEager) {
      const auto msg = check_mask_values(m, read_mask(m.mask_path(i)));
      PISEG_CHECK(msg.empty(), m.mask_path(i).string() << ": " << msg);
    }
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  check_manifest_structure(manifest);
  write_text(path, canonical_manifest(manifest));
}

Image load_sample_image(const DatasetManifest& manifest, size_t i) { return read_image(manifest.image_path(i)); }

SegmentationMap load_sample_mask(const DatasetManifest& manifest, size_t i) {
  SegmentationMap mask = read_mask(manifest.mask_path(i));
  const auto msg = check_mask_values(manifest, mask);
  PISEG_CHECK(msg.empty(), manifest.mask_path(i).string() << ": " << msg);
  if (manifest.mapped()) {
    for (auto& v : mask.labels) v = v == manifest.ignore_index ? kIgnoreIndex : manifest.label_map[v];
  } else if (manifest.ignore_index != kIgnoreIndex) {
    for (auto& v : mask.labels) {
      if (v == manifest.ignore_index) v = kIgnoreIndex;
    }
  }
  return mask;
}

std::vector<std::uint64_t> class_histogram(const SegmentationMap& mask, int num_classes) {
  std::vector<std::uint64_t> h(static_cast<size_t>(num_classes), 0);
  for (auto v : mask.labels) {
    if (v < num_classes) ++h[v];
  }
  return h;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

TaxonomyMapping parse_taxonomy(const std::string& text) {
  TaxonomyMapping mapping;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto tab = t.find('\t');
    PISEG_CHECK(tab != std::string::npos, "taxonomy line " << lineno << " has no tab separator");
    const std::string raw = trim(t.substr(0, tab));
    const std::string unified = trim(t.substr(tab + 1));
    PISEG_CHECK(!raw.empty() && !unified.empty(), "taxonomy line " << lineno << " has an empty field");
    PISEG_CHECK(unified.find('\t') == std::string::npos, "taxonomy line " << lineno << " has more than two fields");
    PISEG_CHECK(mapping.entries.emplace(raw, unified).second,
                "taxonomy maps raw category '" << raw << "' twice (line " << lineno << ")");
  }
  return mapping;
}

TaxonomyMapping read_taxonomy(const fs::path& path) { return parse_taxonomy(read_text(path)); }

void write_taxonomy(const TaxonomyMapping& mapping, const fs::path& path) {
  std::string text = "# raw\tunified\n";
  for (const auto& [raw, unified] : mapping.entries) text += raw + "\t" + unified + "\n";
  write_text(path, text);
}

std::vector<std::string> parse_vocabulary(const std::string& text) {
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    PISEG_CHECK(t != kDropCategory, "DROP is reserved and cannot be a vocabulary entry");
    PISEG_CHECK(seen.insert(t).second, "vocabulary lists '" << t << "' twice");
    vocab.push_back(t);
  }
  return vocab;
}

std::vector<std::string> read_vocabulary(const fs::path& path) { return parse_vocabulary(read_text(path)); }

void write_vocabulary(const std::vector<std::string>& vocab, const fs::path& path) {
  std::string text;
  for (const auto& v : vocab) text += v + "\n";
  write_text(path, text);
}

DatasetManifest map_taxonomy(const DatasetManifest& manifest, const TaxonomyMapping& mapping,
                             const std::vector<std::string>& vocab) {
  std::map<std::string, int> vocab_index;
  for (size_t i = 0; i < vocab.size(); ++i) vocab_index[vocab[i]] = static_cast<int>(i);

  std::vector<std::string> unmapped;
  for (const auto& c : manifest.categories) {
    if (!mapping.entries.count(c)) unmapped.push_back(c);
  }
  if (!unmapped.empty()) {
    std::string list;
    for (const auto& c : unmapped) list += (list.empty() ? "" : ", ") + c;
    throw Error("taxonomy mapping for " + manifest.dataset_id + " does not cover: " + list);
  }

  // Targets in vocabulary order.
  std::set<int> targets;
  for (const auto& c : manifest.categories) {
    const auto& unified = mapping.entries.at(c);
    if (unified == kDropCategory) continue;
    auto it = vocab_index.find(unified);
    PISEG_CHECK(it != vocab_index.end(),
                "category '" << c << "' maps to '" << unified << "', which is not in the unified vocabulary");
    targets.insert(it->second);
  }
  PISEG_CHECK(!targets.empty(), "taxonomy mapping drops every category of " << manifest.dataset_id);

  DatasetManifest out = manifest;
  out.categories.clear();
  std::map<std::string, std::uint8_t> new_id;
  for (int t : targets) {
    new_id[vocab[static_cast<size_t>(t)]] = static_cast<std::uint8_t>(out.categories.size());
    out.categories.push_back(vocab[static_cast<size_t>(t)]);
  }
  auto target_of = [&](const std::string& category) -> std::uint8_t {
    const auto& unified = mapping.entries.at(category);
    return unified == kDropCategory ? kIgnoreIndex : new_id.at(unified);
  };

  // Composes with an existing mapping so masks are still read raw.
  out.raw_categories = manifest.mapped() ? manifest.raw_categories : manifest.categories;
  out.label_map.clear();
  for (size_t k = 0; k < out.raw_categories.size(); ++k) {
    const std::uint8_t mid = manifest.mapped() ? manifest.label_map[k] : static_cast<std::uint8_t>(k);
    out.label_map.push_back(mid == kIgnoreIndex ? kIgnoreIndex : target_of(manifest.categories[mid]));
  }

  auto rename = [&](const std::vector<std::string>& names) {
    std::vector<std::string> result;
    for (const auto& c : names) {
      const auto& unified = mapping.entries.at(c);
      if (unified == kDropCategory) continue;
      if (std::find(result.begin(), result.end(), unified) == result.end()) result.push_back(unified);
    }
    return result;
  };
  if (manifest.split) out.split = DatasetSplit{rename(manifest.split->seen), rename(manifest.split->unseen)};
  out.palette.clear();
  for (const auto& p : manifest.palette) {
    auto it = mapping.entries.find(p.name);
    if (it == mapping.entries.end() || it->second == kDropCategory) continue;
    out.palette.push_back({it->second, p.rgb});
  }
  check_manifest_structure(out);
  return out;
}

json OverlapReport::to_json() const {
  return {{"dataset_id", dataset_id}, {"raw_unique", raw_unique},       {"covered", covered},
          {"test_only", test_only},   {"coverage_ratio", coverage_ratio}, {"test_only_categories", test_only_names}};
}

OverlapReport overlap_report(const std::set<std::string>& train_vocab, const std::string& dataset_id,
                             const std::set<std::string>& test_categories) {
  OverlapReport r;
  r.dataset_id = dataset_id;
  r.raw_unique = static_cast<int>(test_categories.size());
  for (const auto& c : test_categories) {
    if (train_vocab.count(c)) {
      ++r.covered;
    } else {
      ++r.test_only;
      r.test_only_names.push_back(c);
    }
  }
  r.coverage_ratio = r.raw_unique > 0 ? static_cast<double>(r.covered) / r.raw_unique : 0.0;
  return r;
}

std::vector<OverlapReport> overlap_report(const std::set<std::string>& train_vocab,
                                          const std::vector<DatasetManifest>& test_manifests) {
  std::vector<OverlapReport> out;
  for (const auto& m : test_manifests) {
    out.push_back(overlap_report(train_vocab, m.dataset_id, {m.categories.begin(), m.categories.end()}));
  }
  return out;
}

void SyntheticSpec::validate() const {
  PISEG_CHECK(!dataset_id.empty(), "synthetic dataset_id must not be empty");
  PISEG_CHECK(num_images >= 1, "synthetic dataset needs at least one image");
  PISEG_CHECK(patch_stride >= 1, "patch stride must be positive");
  PISEG_CHECK(size >= patch_stride && size % patch_stride == 0,
              "image size " << size << " must be a positive multiple of the patch stride " << patch_stride);
  PISEG_CHECK(num_classes >= 2, "synthetic dataset needs background plus at least one class");
  PISEG_CHECK(num_classes <= kMaxSyntheticClasses,
              num_classes << " classes exceed the " << kMaxSyntheticClasses << " distinguishable colors");
  PISEG_CHECK(shapes_per_image >= 0, "shapes per image must be non-negative");
  PISEG_CHECK(holdout >= 0 && holdout <= num_classes - 2,
              "holdout must leave background and at least one seen class");
  PISEG_CHECK(holdout == 0 || test_images >= 1, "a holdout split needs at least one test image");
  PISEG_CHECK(holdout == 0 || shapes_per_image >= 1, "a holdout split needs at least one shape per image");
}

bool shape_contains(const Shape& s, int y, int x) {
  if (x < s.x || x >= s.x + s.width || y < s.y || y >= s.y + s.height) return false;
  if (s.kind == ShapeKind::kRectangle) return true;
  const double rx = s.width / 2.0, ry = s.height / 2.0;
  const double dx = (x + 0.5 - (s.x + rx)) / rx;
  const double dy = (y + 0.5 - (s.y + ry)) / ry;
  return dx * dx + dy * dy <= 1.0;
}

void rasterize(const Shape& shape, SegmentationMap& mask, Image* image) {
  const Rgb8 color = synthetic_class_color(shape.label);
  const int y1 = std::min(mask.height, shape.y + shape.height);
  const int x1 = std::min(mask.width, shape.x + shape.width);
  for (int y = std::max(0, shape.y); y < y1; ++y) {
    for (int x = std::max(0, shape.x); x < x1; ++x) {
      if (!shape_contains(shape, y, x)) continue;
      mask.at(y, x) = static_cast<std::uint8_t>(shape.label);
      if (image) image->set_pixel(y, x, color);
    }
  }
}

Rgb8 synthetic_class_color(int label) {
  PISEG_CHECK(label >= 0 && label < kMaxSyntheticClasses, "no synthetic color for class " << label);
  static constexpr std::uint8_t kLevels[5] = {0, 64, 128, 191, 255};
  // 47 is coprime with 125, so this walks every lattice point once while
  // keeping consecutive classes far apart.
  const int idx = (label * 47 + 31) % 125;
  return {kLevels[idx / 25], kLevels[(idx / 5) % 5], kLevels[idx % 5]};
}

std::vector<std::string> synthetic_class_names(int num_classes) {
  static const std::vector<std::string> kNames = {"background", "building", "road",       "tree",
                                                  "water",      "car",      "low_vegetation", "bare_soil",
                                                  "farmland",   "ship",     "bridge",     "playground"};
  std::vector<std::string> names;
  for (int i = 0; i < num_classes; ++i) {
    if (i < static_cast<int>(kNames.size())) {
      names.push_back(kNames[static_cast<size_t>(i)]);
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "class_%02d", i);
      names.push_back(buf);
    }
  }
  return names;
}

std::vector<Shape> sample_shapes(const SyntheticSpec& spec, const std::vector<int>& labels, std::optional<int> required,
                                 Rng& rng) {
  const int cells = spec.size / spec.patch_stride;
  const int min_cells = std::min(2, cells);
  const int max_cells = std::max(min_cells, cells / 2);
  std::uniform_int_distribution<int> extent(min_cells, max_cells);
  std::uniform_int_distribution<size_t> pick(0, labels.empty() ? 0 : labels.size() - 1);
  std::bernoulli_distribution ellipse(0.5);

  std::vector<Shape> shapes;
  for (int i = 0; i < spec.shapes_per_image; ++i) {
    Shape s;
    s.kind = spec.ellipses && ellipse(rng) ? ShapeKind::kEllipse : ShapeKind::kRectangle;
    const bool last = i + 1 == spec.shapes_per_image;
    if (last && required) {
      s.label = *required;
    } else {
      PISEG_CHECK(!labels.empty(), "no labels to draw shapes from");
      s.label = labels[pick(rng)];
    }
    const int wc = extent(rng), hc = extent(rng);
    s.width = wc * spec.patch_stride;
    s.height = hc * spec.patch_stride;
    s.x = std::uniform_int_distribution<int>(0, cells - wc)(rng) * spec.patch_stride;
    s.y = std::uniform_int_distribution<int>(0, cells - hc)(rng) * spec.patch_stride;
    shapes.push_back(s);
  }
  return shapes;
}

namespace {

DatasetManifest write_subset(const SyntheticSpec& spec, const fs::path& dir, const std::string& id, int count,
                             const std::vector<int>& labels, const std::vector<int>& required_cycle,
                             int num_categories, std::uint64_t stream) {
  const auto names = synthetic_class_names(spec.num_classes);
  DatasetManifest m;
  m.dataset_id = id;
  m.base_dir = dir;
  m.categories.assign(names.begin(), names.begin() + num_categories);
  m.native_width = m.native_height = spec.size;
  for (int c = 0; c < num_categories; ++c) m.palette.push_back({names[static_cast<size_t>(c)], synthetic_class_color(c)});

  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  Rng rng = make_rng(spec.seed, "synth", stream);
  for (int i = 0; i < count; ++i) {
    std::optional<int> required;
    if (!required_cycle.empty()) required = required_cycle[static_cast<size_t>(i) % required_cycle.size()];
    const auto shapes = sample_shapes(spec, labels, required, rng);
    Image image(spec.size, spec.size);
    SegmentationMap mask(spec.size, spec.size, 0);
    const Rgb8 bg = synthetic_class_color(0);
    for (int y = 0; y < spec.size; ++y) {
      for (int x = 0; x < spec.size; ++x) image.set_pixel(y, x, bg);
    }
    for (const auto& s : shapes) rasterize(s, mask, &image);

    char name[32];
    std::snprintf(name, sizeof(name), "%04d.png", i);
    const DatasetSample sample{std::string("images/") + name, std::string("masks/") + name};
    write_image(image, dir / sample.image);
    write_mask(mask, dir / sample.mask);
    m.samples.push_back(sample);
  }
  return m;
}

}  // namespace

SyntheticOutput generate_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  SyntheticOutput out;
  const int seen_count = spec.num_classes - spec.holdout;
  std::vector<int> seen_fg;
  for (int c = 1; c < seen_count; ++c) seen_fg.push_back(c);

  if (spec.holdout == 0) {
    auto m = write_subset(spec, out_dir, spec.dataset_id, spec.num_images, seen_fg, {}, spec.num_classes, 0);
    out.train_manifest = out_dir / "manifest.json";
    write_manifest(m, out.train_manifest);
    return out;
  }

  const auto train_dir = out_dir / "train";
  auto train = write_subset(spec, train_dir, spec.dataset_id + "_train", spec.num_images, seen_fg, {}, seen_count, 0);
  out.train_manifest = train_dir / "manifest.json";
  write_manifest(train, out.train_manifest);

  std::vector<int> all_fg, holdout;
  for (int c = 1; c < spec.num_classes; ++c) all_fg.push_back(c);
  for (int c = seen_count; c < spec.num_classes; ++c) holdout.push_back(c);
  const auto test_dir = out_dir / "test";
  auto test = write_subset(spec, test_dir, spec.dataset_id + "_test", spec.test_images, all_fg, holdout,
                           spec.num_classes, 1);
  const auto names = synthetic_class_names(spec.num_classes);
  test.split = DatasetSplit{{names.begin(), names.begin() + seen_count}, {names.begin() + seen_count, names.end()}};
  out.test_manifest = test_dir / "manifest.json";
  write_manifest(test, *out.test_manifest);
  return out;
}

}  // namespace piseg

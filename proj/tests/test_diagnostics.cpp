#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <fstream>

#include "json.hpp"

#include "piseg/diagnostics.hpp"
#include "support/oracles.hpp"
#include "support/test_support.hpp"

using namespace piseg;
using piseg::testing::random_map;
using piseg::testing::random_matrix;
using piseg::testing::spit;
using piseg::testing::TempDir;

namespace {

// Two classes split into left and right halves of a 4x4 grid; each class
// slice is `in` on its own region and `out` elsewhere.
CostVolume two_region_delta(const SegmentationMap& gt, double in, double out) {
  CostVolume d{Mat::Zero(16, 2), {4, 4}};
  for (int i = 0; i < 16; ++i) {
    for (int c = 0; c < 2; ++c) d.tensor(i, c) = gt.labels[static_cast<size_t>(i)] == c ? in : out;
  }
  return d;
}

SegmentationMap halves() {
  SegmentationMap gt(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) gt.at(y, x) = x < 2 ? 0 : 1;
  }
  return gt;
}

std::vector<double> csv_column(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<double> ys;
  while (std::getline(in, line)) ys.push_back(std::stod(line.substr(line.find(',') + 1)));
  return ys;
}

}  // namespace

TEST_CASE("hand-built delta volume") {
  const auto gt = halves();
  const auto s = delta_stats(two_region_delta(gt, 0.2, -0.1), gt);
  REQUIRE(s.has_value());
  CHECK(std::abs(s->gt_in_mean - 0.2) <= 1e-12);
  CHECK(std::abs(s->non_gt_mean + 0.1) <= 1e-12);
  CHECK(std::abs(s->gap - 0.3) <= 1e-12);
  CHECK(s->gap == s->gt_in_mean - s->non_gt_mean);
  CHECK(std::abs(s->align_ratio - 0.2 / (0.1 + kAlignEps)) <= 1e-12);
  CHECK(std::abs(s->align_ratio - 2.0) <= 1e-6);
}

TEST_CASE("zero and symmetric deltas") {
  const auto gt = halves();
  const auto zero = delta_stats(two_region_delta(gt, 0.0, 0.0), gt);
  CHECK(zero->gt_in_mean == 0.0);
  CHECK(zero->non_gt_mean == 0.0);
  CHECK(zero->gap == 0.0);
  CHECK(zero->align_ratio == 0.0);

  const auto flat = delta_stats(two_region_delta(gt, 0.3, 0.3), gt);
  CHECK(flat->gap == 0.0);
  CHECK(std::abs(flat->align_ratio - 1.0) <= 1e-7);

  const auto negative = delta_stats(two_region_delta(gt, -0.2, 0.1), gt);
  CHECK(negative->align_ratio == 0.0);
}

TEST_CASE("ignored cells and absent classes") {
  SegmentationMap gt(4, 4, kIgnoreIndex);
  CostVolume d{Mat::Ones(16, 3), {4, 4}};
  CHECK_FALSE(delta_stats(d, gt).has_value());

  // Class 2 absent; class 0 on two cells, class 1 on one, rest ignored.
  gt.labels[0] = 0;
  gt.labels[1] = 0;
  gt.labels[5] = 1;
  Rng rng(1);
  d.tensor = random_matrix(16, 3, rng);
  const auto s = delta_stats(d, gt);
  const double in0 = (d.tensor(0, 0) + d.tensor(1, 0)) / 2, out0 = d.tensor(5, 0);
  const double in1 = d.tensor(5, 1), out1 = (d.tensor(0, 1) + d.tensor(1, 1)) / 2;
  CHECK(std::abs(s->gt_in_mean - (in0 + in1) / 2) <= 1e-12);
  CHECK(std::abs(s->non_gt_mean - (out0 + out1) / 2) <= 1e-12);

  CHECK_THROWS_AS(delta_stats(d, SegmentationMap(2, 8)), Error);
}

TEST_CASE("batch averaging is order-invariant and keeps the gap identity") {
  std::vector<DeltaStats> items = {{0.2, -0.1, 0.3, 2.0, 4}, {0.4, 0.1, 0.3, 4.0, 4}, {0.0, 0.2, -0.2, 0.0, 4}};
  const auto a = average_delta_stats(items);
  std::reverse(items.begin(), items.end());
  const auto b = average_delta_stats(items);
  CHECK(std::abs(a->gt_in_mean - 0.2) <= 1e-12);
  CHECK(std::abs(a->non_gt_mean - 0.2 / 3) <= 1e-12);
  CHECK(a->gap == a->gt_in_mean - a->non_gt_mean);
  CHECK(std::abs(a->gt_in_mean - b->gt_in_mean) <= 1e-15);
  CHECK(std::abs(a->align_ratio - 2.0) <= 1e-12);
  CHECK_FALSE(average_delta_stats({}).has_value());
}

TEST_CASE("delta cost against two independent cost computations") {
  Rng rng(2);
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.sigma_t = 0.0;
  auto params = init_model(cfg, rng);
  params.spm.text.mu = random_matrix(1, 8, rng, 0.3);
  TextEmbedding text{random_matrix(3, 8, rng), {"a", "b", "c"}};
  VisualFeatureMap visual{random_matrix(16, 8, rng), {4, 4}, {16, 16}};
  const auto delta = delta_cost(cfg, params, text, visual, rng);
  Mat shifted = text.matrix;
  for (int n = 0; n < 3; ++n) shifted.row(n) += params.spm.text.mu;
  const auto perturbed = oracle::cosine_cost(visual.tensor, shifted, kCosineEps);
  const auto clean = oracle::cosine_cost(visual.tensor, text.matrix, kCosineEps);
  for (int p = 0; p < 16; ++p) {
    for (int k = 0; k < 3; ++k) {
      const auto up = static_cast<size_t>(p), uk = static_cast<size_t>(k);
      CHECK(std::abs(delta.tensor(p, k) - (perturbed[up][uk] - clean[up][uk])) <= 1e-12);
    }
  }
}

TEST_CASE("zero-perturbation configurations give all-zero statistics") {
  Rng rng(3);
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.sigma_t = 0.0;
  const auto params = init_model(cfg, rng);
  TextEmbedding text{random_matrix(3, 8, rng), {"a", "b", "c"}};
  VisualFeatureMap visual{random_matrix(16, 8, rng), {4, 4}, {16, 16}};
  const auto gt = random_map(4, 4, 3, rng, 0.1);
  for (auto family : {NoiseFamily::kGaussian, NoiseFamily::kLaplace, NoiseFamily::kUniform, NoiseFamily::kStudentT}) {
    cfg.noise.family = family;
    const auto delta = delta_cost(cfg, params, text, visual, rng, 3);
    CHECK(delta.tensor.isZero(0.0));
    const auto s = delta_stats(delta, gt);
    CHECK(s->gt_in_mean == 0.0);
    CHECK(s->non_gt_mean == 0.0);
    CHECK(s->gap == 0.0);
    CHECK(s->align_ratio == 0.0);
  }
  ModelConfig off = cfg;
  off.sigma_t = 0.5;
  off.text_spm = false;
  off.image_spm = false;
  CHECK(delta_cost(off, init_model(off, rng), text, visual, rng).tensor.isZero(0.0));
}

TEST_CASE("plots export monotone point data") {
  TempDir dir("plots");
  std::string log;
  for (int s = 0; s < 5; ++s) {
    const double in = 0.01 * s, out = -0.005 * s;
    nlohmann::json r = {{"step", s * 10}, {"loss", 1.0 / (s + 1)}};
    r["gt_in_mean"] = in;
    r["non_gt_mean"] = out;
    r["gap"] = in - out;
    r["align_ratio"] = 0.5 * s;
    log += r.dump() + "\n";
  }
  spit(dir.path() / "metrics.jsonl", log);
  const auto summary = emit_plots(dir.path() / "metrics.jsonl", dir.path() / "plots");
  CHECK(summary.warnings.empty());
  CHECK(summary.files.size() == 9);
  for (const auto& name : delta_field_names()) {
    CHECK(std::filesystem::exists(dir.path() / "plots" / (name + ".png")));
    const auto ys = csv_column(dir.path() / "plots" / (name + ".csv"));
    REQUIRE(ys.size() == 5);
    const bool decreasing = name == "non_gt_mean";
    for (size_t i = 1; i < ys.size(); ++i) CHECK((decreasing ? ys[i] < ys[i - 1] : ys[i] > ys[i - 1]));
  }
  CHECK(std::filesystem::exists(dir.path() / "plots" / "delta_panel.png"));
}

TEST_CASE("plot warnings on degenerate logs") {
  TempDir dir("plots-empty");
  spit(dir.path() / "empty.jsonl", "");
  auto s = emit_plots(dir.path() / "empty.jsonl", dir.path() / "out");
  CHECK(s.files.empty());
  CHECK(s.warnings.size() == 1);

  spit(dir.path() / "nodelta.jsonl", "{\"step\":0,\"loss\":1}\n{\"step\":1,\"loss\":0.5}\n");
  s = emit_plots(dir.path() / "nodelta.jsonl", dir.path() / "out");
  CHECK(s.files.empty());
  CHECK(s.warnings.size() == 1);

  spit(dir.path() / "bad.jsonl", "{\"step\":0}\nnot json\n");
  CHECK_THROWS_AS(emit_plots(dir.path() / "bad.jsonl", dir.path() / "out"), Error);
}

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "piseg/image.hpp"

namespace piseg {

/// counts[g * N + p]: pixels with ground truth g predicted as p.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::uint64_t> counts;
  std::uint64_t ignored = 0;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int n) : num_classes(n), counts(static_cast<size_t>(n) * n, 0) {}

  std::uint64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * num_classes + pred]; }
  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Adds one prediction/ground-truth pair into `cm`.
void accumulate_confusion(ConfusionMatrix& cm, const SegmentationMap& pred, const SegmentationMap& gt,
                          std::uint8_t ignore_index = kIgnoreIndex);
ConfusionMatrix accumulate_confusion(const SegmentationMap& pred, const SegmentationMap& gt, int num_classes,
                                     std::uint8_t ignore_index = kIgnoreIndex);

/// IoU = TP / (TP + FP + FN); ACC = TP / (TP + FN). A class with neither
/// ground-truth nor predicted pixels has no IoU; a class without ground truth
/// has no ACC. Absent values are excluded from means.
struct ClassMetric {
  std::string name;
  std::optional<double> iou;
  std::optional<double> acc;
  std::uint64_t gt_pixels = 0;
  std::uint64_t pred_pixels = 0;
};

std::vector<ClassMetric> class_metrics(const ConfusionMatrix& cm, const std::vector<std::string>& class_names = {});

struct SplitSection {
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  std::optional<double> overall_miou, seen_miou, unseen_miou;
  std::optional<double> overall_macc, seen_macc, unseen_macc;
};

struct EvalReport {
  std::string dataset_id;
  std::vector<ClassMetric> per_class;
  double miou = 0.0;
  double macc = 0.0;
  std::optional<SplitSection> split;
};

EvalReport dataset_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          const std::string& dataset_id = "");
EvalReport dataset_report(const std::vector<ConfusionMatrix>& cms, const std::vector<std::string>& class_names,
                          const std::string& dataset_id = "");

SplitSection split_report(const EvalReport& report, const std::vector<std::string>& seen,
                          const std::vector<std::string>& unseen);

inline constexpr double kHighResolutionArea = 800.0 * 800.0;

struct DatasetResolution {
  std::string dataset_id;
  double width = 0.0;
  double height = 0.0;
};

enum class ResolutionGroup { kLow, kHigh };

/// Area below 800 x 800 is low resolution; everything else is high.
ResolutionGroup resolution_group(double width, double height);

struct ResolutionGrouping {
  std::vector<std::string> low;
  std::vector<std::string> high;
  std::optional<double> low_miou, high_miou, low_macc, high_macc;
};

ResolutionGrouping resolution_groups(const std::vector<DatasetResolution>& datasets);

struct CrossDatasetReport {
  std::vector<EvalReport> datasets;
  double m_miou = 0.0;
  double m_macc = 0.0;
  std::optional<ResolutionGrouping> groups;
};

/// Unweighted means over datasets. When `resolutions` is given, group
/// sub-means are filled in for every listed dataset.
CrossDatasetReport cross_dataset_report(const std::vector<EvalReport>& reports,
                                        const std::vector<DatasetResolution>* resolutions = nullptr);

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const CrossDatasetReport& report);
/// Aligned plain-text tables, metrics as percentages with two decimals.
std::string format_table(const EvalReport& report);
std::string format_table(const CrossDatasetReport& report);

}  // namespace piseg

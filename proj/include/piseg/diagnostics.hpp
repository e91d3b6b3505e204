#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "piseg/model.hpp"

namespace piseg {

inline constexpr double kAlignEps = 1e-8;

/// Response change of the raw cost volume caused by the perturbation modules.
///   gt_in_mean  : mean over present classes of the mean change inside the class region
///   non_gt_mean : mean over present classes of the mean change outside it
///   gap         : gt_in_mean - non_gt_mean
///   align_ratio : max(0, gt_in_mean / (|non_gt_mean| + eps))
struct DeltaStats {
  double gt_in_mean = 0.0;
  double non_gt_mean = 0.0;
  double gap = 0.0;
  double align_ratio = 0.0;
  std::int64_t step = 0;
};

/// C_perturbed - C_clean for one image, averaged over `draws` independent
/// noise draws. Both passes use the same weights; the clean pass runs the
/// perturbation modules in eval mode.
CostVolume delta_cost(const ModelConfig& config, const ModelParams& params, const TextEmbedding& text,
                      const VisualFeatureMap& visual, Rng& rng, int draws = 1);

/// Statistics of one delta volume against ground truth at cost-grid
/// resolution. Returns nullopt when no class is present.
std::optional<DeltaStats> delta_stats(const CostVolume& delta, const SegmentationMap& gt_grid,
                                      double eps = kAlignEps);

/// Mean over images. gap is recomputed from the averaged means.
std::optional<DeltaStats> average_delta_stats(const std::vector<DeltaStats>& per_image);

struct PlotSummary {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

/// Reads a JSON-lines training log and writes one curve per statistic
/// (PNG + CSV points) and a combined panel.
PlotSummary emit_plots(const std::filesystem::path& log_path, const std::filesystem::path& out_dir);

inline const std::vector<std::string>& delta_field_names() {
  static const std::vector<std::string> names = {"gt_in_mean", "non_gt_mean", "gap", "align_ratio"};
  return names;
}

}  // namespace piseg

#include "piseg/diagnostics.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "piseg/plot.hpp"

namespace piseg {

CostVolume delta_cost(const ModelConfig& config, const ModelParams& params, const TextEmbedding& text,
                      const VisualFeatureMap& visual, Rng& rng, int draws) {
  PISEG_CHECK(draws >= 1, "delta_cost needs at least one draw");
  const CostVolume clean = raw_cost(config, params, text, visual, SpmMode::kEval, nullptr);
  CostVolume delta;
  delta.grid = clean.grid;
  delta.tensor = Mat::Zero(clean.tensor.rows(), clean.tensor.cols());
  for (int d = 0; d < draws; ++d) {
    const NoiseDraw noise = draw_noise(config, visual.tensor.rows(), rng);
    const CostVolume perturbed = raw_cost(config, params, text, visual, SpmMode::kTrain, &noise);
    PISEG_CHECK(perturbed.tensor.rows() == clean.tensor.rows() && perturbed.tensor.cols() == clean.tensor.cols(),
                "delta_cost: shape mismatch between passes");
    delta.tensor += perturbed.tensor - clean.tensor;
  }
  if (draws > 1) delta.tensor /= static_cast<double>(draws);
  return delta;
}

std::optional<DeltaStats> delta_stats(const CostVolume& delta, const SegmentationMap& gt_grid, double eps) {
  PISEG_CHECK(gt_grid.height == delta.grid.height && gt_grid.width == delta.grid.width,
              "delta_stats: gt grid " << gt_grid.height << "x" << gt_grid.width << " does not match cost grid "
                                      << delta.grid.height << "x" << delta.grid.width);
  PISEG_CHECK(delta.tensor.rows() == delta.grid.area(), "delta volume rows do not match its grid");
  const int classes = delta.num_classes();

  std::vector<std::int64_t> class_cells(static_cast<size_t>(classes), 0);
  std::int64_t valid_cells = 0;
  for (auto label : gt_grid.labels) {
    if (label == kIgnoreIndex) continue;
    PISEG_CHECK(label < classes, "gt label " << int(label) << " out of range for " << classes << " classes");
    ++class_cells[label];
    ++valid_cells;
  }

  double in_total = 0.0;
  double out_total = 0.0;
  int present = 0;
  int with_outside = 0;
  for (int c = 0; c < classes; ++c) {
    if (class_cells[c] == 0) continue;
    double in_sum = 0.0, out_sum = 0.0;
    for (size_t i = 0; i < gt_grid.labels.size(); ++i) {
      const auto label = gt_grid.labels[i];
      if (label == kIgnoreIndex) continue;
      (label == c ? in_sum : out_sum) += delta.tensor(static_cast<Eigen::Index>(i), c);
    }
    in_total += in_sum / static_cast<double>(class_cells[c]);
    ++present;
    const std::int64_t outside = valid_cells - class_cells[c];
    if (outside > 0) {
      out_total += out_sum / static_cast<double>(outside);
      ++with_outside;
    }
  }
  if (present == 0) return std::nullopt;

  DeltaStats s;
  s.gt_in_mean = in_total / present;
  s.non_gt_mean = with_outside > 0 ? out_total / with_outside : 0.0;
  s.gap = s.gt_in_mean - s.non_gt_mean;
  s.align_ratio = std::max(0.0, s.gt_in_mean / (std::abs(s.non_gt_mean) + eps));
  return s;
}

std::optional<DeltaStats> average_delta_stats(const std::vector<DeltaStats>& per_image) {
  if (per_image.empty()) return std::nullopt;
  DeltaStats avg;
  for (const auto& s : per_image) {
    avg.gt_in_mean += s.gt_in_mean;
    avg.non_gt_mean += s.non_gt_mean;
    avg.align_ratio += s.align_ratio;
  }
  const double n = static_cast<double>(per_image.size());
  avg.gt_in_mean /= n;
  avg.non_gt_mean /= n;
  avg.align_ratio /= n;
  avg.gap = avg.gt_in_mean - avg.non_gt_mean;
  avg.step = per_image.front().step;
  return avg;
}

PlotSummary emit_plots(const std::filesystem::path& log_path, const std::filesystem::path& out_dir) {
  PlotSummary summary;
  std::ifstream in(log_path);
  PISEG_CHECK(in, "cannot read log " << log_path.string());

  std::vector<Series> series;
  for (const auto& name : delta_field_names()) series.push_back({name, {}, {}});
  size_t records = 0;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(log_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ++records;
    PISEG_CHECK(record.contains("step"), log_path.string() << ":" << line_no << ": record without step");
    const double step = record["step"].get<double>();
    for (auto& s : series) {
      if (record.contains(s.name) && record[s.name].is_number()) {
        s.x.push_back(step);
        s.y.push_back(record[s.name].get<double>());
      }
    }
  }
  if (records == 0) {
    summary.warnings.push_back("log " + log_path.string() + " is empty; nothing to plot");
    return summary;
  }
  std::vector<Series> present;
  for (const auto& s : series) {
    if (!s.x.empty()) present.push_back(s);
  }
  if (present.empty()) {
    summary.warnings.push_back("log " + log_path.string() + " has no delta-correlation fields; no plots written");
    return summary;
  }
  std::filesystem::create_directories(out_dir);
  for (const auto& s : present) {
    const auto png = out_dir / (s.name + ".png");
    const auto csv = out_dir / (s.name + ".csv");
    write_line_chart(png, s, "step");
    write_points_csv(csv, s, "step");
    summary.files.push_back(png);
    summary.files.push_back(csv);
  }
  const auto panel = out_dir / "delta_panel.png";
  write_panel(panel, present, "step");
  summary.files.push_back(panel);
  return summary;
}

}  // namespace piseg

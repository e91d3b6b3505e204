#include "piseg/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace piseg {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = ignored;
  for (auto c : counts) sum += c;
  return sum;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  PISEG_CHECK(num_classes == other.num_classes, "cannot merge confusion matrices with " << num_classes << " and "
                                                                                         << other.num_classes
                                                                                         << " classes");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  ignored += other.ignored;
  return *this;
}

void accumulate_confusion(ConfusionMatrix& cm, const SegmentationMap& pred, const SegmentationMap& gt,
                          std::uint8_t ignore_index) {
  PISEG_CHECK(pred.height == gt.height && pred.width == gt.width,
              "prediction " << pred.height << "x" << pred.width << " does not match ground truth " << gt.height << "x"
                            << gt.width);
  const int n = cm.num_classes;
  for (size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    const int p = pred.labels[i];
    if (g == ignore_index) {
      ++cm.ignored;
      continue;
    }
    PISEG_CHECK(g < n, "ground-truth label " << g << " out of range for " << n << " classes");
    PISEG_CHECK(p < n, "predicted label " << p << " out of range for " << n << " classes");
    ++cm.counts[static_cast<size_t>(g) * n + p];
  }
}

ConfusionMatrix accumulate_confusion(const SegmentationMap& pred, const SegmentationMap& gt, int num_classes,
                                     std::uint8_t ignore_index) {
  PISEG_CHECK(num_classes >= 1, "confusion matrix needs at least one class");
  ConfusionMatrix cm(num_classes);
  accumulate_confusion(cm, pred, gt, ignore_index);
  return cm;
}

std::vector<ClassMetric> class_metrics(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  PISEG_CHECK(class_names.empty() || static_cast<int>(class_names.size()) == cm.num_classes,
              "got " << class_names.size() << " class names for " << cm.num_classes << " classes");
  const int n = cm.num_classes;
  std::vector<ClassMetric> out(static_cast<size_t>(n));
  for (int c = 0; c < n; ++c) {
    auto& m = out[static_cast<size_t>(c)];
    m.name = class_names.empty() ? std::to_string(c) : class_names[static_cast<size_t>(c)];
    for (int k = 0; k < n; ++k) {
      m.gt_pixels += cm.at(c, k);
      m.pred_pixels += cm.at(k, c);
    }
    const auto tp = static_cast<double>(cm.at(c, c));
    const std::uint64_t uni = m.gt_pixels + m.pred_pixels - cm.at(c, c);
    if (uni > 0) m.iou = tp / static_cast<double>(uni);
    if (m.gt_pixels > 0) m.acc = tp / static_cast<double>(m.gt_pixels);
  }
  return out;
}

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

EvalReport dataset_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          const std::string& dataset_id) {
  EvalReport r;
  r.dataset_id = dataset_id;
  r.per_class = class_metrics(cm, class_names);
  std::vector<double> ious, accs;
  for (const auto& m : r.per_class) {
    if (m.iou) ious.push_back(*m.iou);
    if (m.acc) accs.push_back(*m.acc);
  }
  PISEG_CHECK(!ious.empty(), "empty report: no class of dataset '" << dataset_id << "' is present");
  r.miou = *mean_of(ious);
  r.macc = mean_of(accs).value_or(0.0);
  return r;
}

EvalReport dataset_report(const std::vector<ConfusionMatrix>& cms, const std::vector<std::string>& class_names,
                          const std::string& dataset_id) {
  PISEG_CHECK(!cms.empty(), "dataset_report needs at least one confusion matrix");
  ConfusionMatrix total = cms.front();
  for (size_t i = 1; i < cms.size(); ++i) total += cms[i];
  return dataset_report(total, class_names, dataset_id);
}

SplitSection split_report(const EvalReport& report, const std::vector<std::string>& seen,
                          const std::vector<std::string>& unseen) {
  std::map<std::string, const ClassMetric*> by_name;
  for (const auto& m : report.per_class) by_name[m.name] = &m;
  const std::set<std::string> seen_set(seen.begin(), seen.end());
  for (const auto& name : unseen) {
    PISEG_CHECK(!seen_set.count(name), "class '" << name << "' is listed as both seen and unseen");
  }
  for (const auto* list : {&seen, &unseen}) {
    for (const auto& name : *list) {
      PISEG_CHECK(by_name.count(name), "split class '" << name << "' is not in the report for '" << report.dataset_id
                                                       << "'");
    }
  }

  auto collect = [&](const std::vector<std::string>& names, std::vector<double>& ious, std::vector<double>& accs) {
    for (const auto& name : names) {
      const auto* m = by_name.at(name);
      if (m->iou) ious.push_back(*m->iou);
      if (m->acc) accs.push_back(*m->acc);
    }
  };
  SplitSection s;
  s.seen = seen;
  s.unseen = unseen;
  std::vector<double> seen_iou, seen_acc, unseen_iou, unseen_acc;
  collect(seen, seen_iou, seen_acc);
  collect(unseen, unseen_iou, unseen_acc);
  s.seen_miou = mean_of(seen_iou);
  s.seen_macc = mean_of(seen_acc);
  if (!unseen.empty()) {
    s.unseen_miou = mean_of(unseen_iou);
    s.unseen_macc = mean_of(unseen_acc);
  }
  std::vector<double> all_iou = seen_iou, all_acc = seen_acc;
  all_iou.insert(all_iou.end(), unseen_iou.begin(), unseen_iou.end());
  all_acc.insert(all_acc.end(), unseen_acc.begin(), unseen_acc.end());
  s.overall_miou = mean_of(all_iou);
  s.overall_macc = mean_of(all_acc);
  return s;
}

ResolutionGroup resolution_group(double width, double height) {
  PISEG_CHECK(width > 0.0 && height > 0.0, "native resolution must be positive");
  return width * height < kHighResolutionArea ? ResolutionGroup::kLow : ResolutionGroup::kHigh;
}

ResolutionGrouping resolution_groups(const std::vector<DatasetResolution>& datasets) {
  ResolutionGrouping g;
  for (const auto& d : datasets) {
    (resolution_group(d.width, d.height) == ResolutionGroup::kLow ? g.low : g.high).push_back(d.dataset_id);
  }
  return g;
}

CrossDatasetReport cross_dataset_report(const std::vector<EvalReport>& reports,
                                        const std::vector<DatasetResolution>* resolutions) {
  PISEG_CHECK(!reports.empty(), "cross-dataset report needs at least one dataset report");
  CrossDatasetReport out;
  out.datasets = reports;
  double miou = 0.0, macc = 0.0;
  for (const auto& r : reports) {
    miou += r.miou;
    macc += r.macc;
  }
  out.m_miou = miou / static_cast<double>(reports.size());
  out.m_macc = macc / static_cast<double>(reports.size());

  if (resolutions) {
    ResolutionGrouping g = resolution_groups(*resolutions);
    auto group_mean = [&](const std::vector<std::string>& ids, bool use_iou) -> std::optional<double> {
      std::vector<double> v;
      for (const auto& id : ids) {
        for (const auto& r : reports) {
          if (r.dataset_id == id) v.push_back(use_iou ? r.miou : r.macc);
        }
      }
      return mean_of(v);
    };
    g.low_miou = group_mean(g.low, true);
    g.low_macc = group_mean(g.low, false);
    g.high_miou = group_mean(g.high, true);
    g.high_macc = group_mean(g.high, false);
    out.groups = g;
  }
  return out;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v * 100.0);
  return buf;
}

std::string row(const std::vector<std::string>& cells, const std::vector<size_t>& widths) {
  std::string out;
  for (size_t i = 0; i < cells.size(); ++i) {
    std::string cell = cells[i];
    const size_t pad = widths[i] > cell.size() ? widths[i] - cell.size() : 0;
    out += i == 0 ? cell + std::string(pad, ' ') : std::string(pad, ' ') + cell;
    if (i + 1 < cells.size()) out += "  ";
  }
  return out + "\n";
}

std::string table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> widths(rows.front().size(), 0);
  for (const auto& r : rows) {
    for (size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], r[i].size());
  }
  std::string out = row(rows.front(), widths);
  size_t total = 0;
  for (auto w : widths) total += w;
  out += std::string(total + 2 * (widths.size() - 1), '-') + "\n";
  for (size_t i = 1; i < rows.size(); ++i) out += row(rows[i], widths);
  return out;
}

}  // namespace

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["dataset_id"] = report.dataset_id;
  j["mIoU"] = report.miou;
  j["mACC"] = report.macc;
  j["per_class"] = nlohmann::json::array();
  for (const auto& m : report.per_class) {
    j["per_class"].push_back({{"class", m.name}, {"IoU", opt(m.iou)}, {"ACC", opt(m.acc)},
                              {"gt_pixels", m.gt_pixels}, {"pred_pixels", m.pred_pixels}});
  }
  if (report.split) {
    const auto& s = *report.split;
    j["split"] = {{"seen", s.seen},
                  {"unseen", s.unseen},
                  {"overall", {{"mIoU", opt(s.overall_miou)}, {"mACC", opt(s.overall_macc)}}},
                  {"seen_mean", {{"mIoU", opt(s.seen_miou)}, {"mACC", opt(s.seen_macc)}}}};
    if (!s.unseen.empty()) j["split"]["unseen_mean"] = {{"mIoU", opt(s.unseen_miou)}, {"mACC", opt(s.unseen_macc)}};
  }
  return j;
}

nlohmann::json to_json(const CrossDatasetReport& report) {
  nlohmann::json j;
  j["m-mIoU"] = report.m_miou;
  j["m-mACC"] = report.m_macc;
  j["datasets"] = nlohmann::json::array();
  for (const auto& r : report.datasets) {
    j["datasets"].push_back({{"dataset_id", r.dataset_id}, {"mIoU", r.miou}, {"mACC", r.macc}});
  }
  if (report.groups) {
    const auto& g = *report.groups;
    j["resolution_groups"] = {
        {"low", {{"datasets", g.low}, {"mIoU", opt(g.low_miou)}, {"mACC", opt(g.low_macc)}}},
        {"high", {{"datasets", g.high}, {"mIoU", opt(g.high_miou)}, {"mACC", opt(g.high_macc)}}}};
  }
  return j;
}

std::string format_table(const EvalReport& report) {
  std::vector<std::vector<std::string>> rows = {{"class", "IoU", "ACC"}};
  for (const auto& m : report.per_class) rows.push_back({m.name, pct(m.iou), pct(m.acc)});
  rows.push_back({"mean", pct(report.miou), pct(report.macc)});
  std::string out = "dataset: " + report.dataset_id + "\n" + table(rows);
  if (report.split) {
    const auto& s = *report.split;
    std::vector<std::vector<std::string>> split_rows = {{"split", "mIoU", "mACC"},
                                                        {"overall", pct(s.overall_miou), pct(s.overall_macc)},
                                                        {"seen", pct(s.seen_miou), pct(s.seen_macc)}};
    if (!s.unseen.empty()) split_rows.push_back({"unseen", pct(s.unseen_miou), pct(s.unseen_macc)});
    out += "\n" + table(split_rows);
  }
  return out;
}

std::string format_table(const CrossDatasetReport& report) {
  std::vector<std::vector<std::string>> rows = {{"dataset", "mIoU", "mACC"}};
  for (const auto& r : report.datasets) rows.push_back({r.dataset_id, pct(r.miou), pct(r.macc)});
  rows.push_back({"m-mean", pct(report.m_miou), pct(report.m_macc)});
  std::string out = table(rows);
  if (report.groups) {
    const auto& g = *report.groups;
    out += "\n" + table({{"group", "mIoU", "mACC"},
                         {"low-resolution", pct(g.low_miou), pct(g.low_macc)},
                         {"high-resolution", pct(g.high_miou), pct(g.high_macc)}});
  }
  return out;
}

}  // namespace piseg

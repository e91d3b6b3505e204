#pragma once

// Reference implementations written independently of the library: plain
// loops over scalars, no shared helpers.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "piseg/common.hpp"
#include "piseg/image.hpp"

namespace piseg::oracle {

/// cost[p][n] = <v_p, t_n> / (max(|v_p|, eps) * max(|t_n|, eps)).
inline std::vector<std::vector<double>> cosine_cost(const Mat& visual, const Mat& text, double eps) {
  std::vector<std::vector<double>> out(static_cast<size_t>(visual.rows()),
                                       std::vector<double>(static_cast<size_t>(text.rows())));
  for (Eigen::Index p = 0; p < visual.rows(); ++p) {
    for (Eigen::Index n = 0; n < text.rows(); ++n) {
      double dot = 0.0, vv = 0.0, tt = 0.0;
      for (Eigen::Index c = 0; c < visual.cols(); ++c) {
        dot += visual(p, c) * text(n, c);
        vv += visual(p, c) * visual(p, c);
        tt += text(n, c) * text(n, c);
      }
      out[static_cast<size_t>(p)][static_cast<size_t>(n)] =
          dot / (std::max(std::sqrt(vv), eps) * std::max(std::sqrt(tt), eps));
    }
  }
  return out;
}

/// T_hat[n][c] = T[n][c] + |sigma[c]| * z[c] + mu[c].
inline Mat text_perturbation(const Mat& text, const Mat& mu, const Mat& sigma, const Mat& z) {
  Mat out(text.rows(), text.cols());
  for (Eigen::Index n = 0; n < text.rows(); ++n) {
    for (Eigen::Index c = 0; c < text.cols(); ++c) {
      out(n, c) = text(n, c) + std::abs(sigma(0, c)) * z(0, c) + mu(0, c);
    }
  }
  return out;
}

struct PixelMetrics {
  std::vector<std::optional<double>> iou;
  std::vector<std::optional<double>> acc;
  std::optional<double> miou;
  std::optional<double> macc;
};

/// Per-class IoU/ACC from raw per-pixel tallies over several image pairs.
inline PixelMetrics pixel_metrics(const std::vector<SegmentationMap>& preds, const std::vector<SegmentationMap>& gts,
                                  int num_classes) {
  std::vector<double> tp(static_cast<size_t>(num_classes), 0), fp(tp), fn(tp);
  for (size_t i = 0; i < preds.size(); ++i) {
    for (size_t k = 0; k < gts[i].labels.size(); ++k) {
      const int g = gts[i].labels[k];
      const int p = preds[i].labels[k];
      if (g == 255) continue;
      if (g == p) {
        tp[static_cast<size_t>(g)] += 1;
      } else {
        fn[static_cast<size_t>(g)] += 1;
        fp[static_cast<size_t>(p)] += 1;
      }
    }
  }
  PixelMetrics m;
  double iou_sum = 0, acc_sum = 0;
  int iou_n = 0, acc_n = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto u = static_cast<size_t>(c);
    std::optional<double> iou, acc;
    if (tp[u] + fp[u] + fn[u] > 0) {
      iou = tp[u] / (tp[u] + fp[u] + fn[u]);
      iou_sum += *iou;
      ++iou_n;
    }
    if (tp[u] + fn[u] > 0) {
      acc = tp[u] / (tp[u] + fn[u]);
      acc_sum += *acc;
      ++acc_n;
    }
    m.iou.push_back(iou);
    m.acc.push_back(acc);
  }
  if (iou_n > 0) m.miou = iou_sum / iou_n;
  if (acc_n > 0) m.macc = acc_sum / acc_n;
  return m;
}

/// Mean of the present values among `classes`.
inline std::optional<double> mean_over(const std::vector<std::optional<double>>& values,
                                       const std::vector<int>& classes) {
  double sum = 0;
  int n = 0;
  for (int c : classes) {
    if (values[static_cast<size_t>(c)]) {
      sum += *values[static_cast<size_t>(c)];
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace piseg::oracle

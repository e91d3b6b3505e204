#include "piseg/plot.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "piseg/common.hpp"

namespace piseg {

namespace {

const cv::Scalar kBlack(0, 0, 0);
const cv::Scalar kGrey(200, 200, 200);
const cv::Scalar kLine(180, 90, 20);
const std::vector<cv::Scalar> kBarColors = {{180, 90, 20}, {40, 140, 230}, {60, 170, 60}, {60, 60, 200}};

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

void put_text(cv::Mat& img, const std::string& text, cv::Point at, double scale = 0.45) {
  cv::putText(img, text, at, cv::FONT_HERSHEY_SIMPLEX, scale, kBlack, 1, cv::LINE_AA);
}

cv::Mat render_line_chart(const Series& s, const std::string& x_label, int width = 640, int height = 400) {
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 80, right = 20, top = 40, bottom = 50;
  const cv::Rect area(left, top, width - left - right, height - top - bottom);
  cv::rectangle(img, area, kBlack, 1);
  put_text(img, s.name, {left, 25}, 0.6);
  put_text(img, x_label, {left + area.width / 2 - 15, height - 12});
  put_text(img, s.name, {5, top - 8}, 0.4);

  if (s.x.empty()) return img;
  auto [xmin_it, xmax_it] = std::minmax_element(s.x.begin(), s.x.end());
  auto [ymin_it, ymax_it] = std::minmax_element(s.y.begin(), s.y.end());
  double x0 = *xmin_it, x1 = *xmax_it, y0 = *ymin_it, y1 = *ymax_it;
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto map = [&](double x, double y) {
    return cv::Point(area.x + static_cast<int>((x - x0) / (x1 - x0) * area.width),
                     area.y + area.height - static_cast<int>((y - y0) / (y1 - y0) * area.height));
  };
  if (y0 < 0.0 && y1 > 0.0) cv::line(img, map(x0, 0.0), map(x1, 0.0), kGrey, 1);
  put_text(img, short_number(y1), {5, area.y + 12});
  put_text(img, short_number(y0), {5, area.y + area.height});
  put_text(img, short_number(x0), {area.x, area.y + area.height + 18});
  put_text(img, short_number(x1), {area.x + area.width - 40, area.y + area.height + 18});
  for (size_t i = 1; i < s.x.size(); ++i) {
    cv::line(img, map(s.x[i - 1], s.y[i - 1]), map(s.x[i], s.y[i]), kLine, 2, cv::LINE_AA);
  }
  for (size_t i = 0; i < s.x.size(); ++i) cv::circle(img, map(s.x[i], s.y[i]), 2, kLine, cv::FILLED);
  return img;
}

void write_png(const std::filesystem::path& path, const cv::Mat& img) {
  PISEG_CHECK(cv::imwrite(path.string(), img), "cannot write " << path.string());
}

}  // namespace

void write_line_chart(const std::filesystem::path& path, const Series& series, const std::string& x_label) {
  write_png(path, render_line_chart(series, x_label));
}

void write_panel(const std::filesystem::path& path, const std::vector<Series>& series, const std::string& x_label) {
  PISEG_CHECK(!series.empty(), "panel needs at least one series");
  const int cols = std::min<int>(2, static_cast<int>(series.size()));
  const int rows = (static_cast<int>(series.size()) + cols - 1) / cols;
  const int w = 640, h = 400;
  cv::Mat canvas(rows * h, cols * w, CV_8UC3, cv::Scalar(255, 255, 255));
  for (size_t i = 0; i < series.size(); ++i) {
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    render_line_chart(series[i], x_label, w, h).copyTo(canvas(cv::Rect(c * w, r * h, w, h)));
  }
  write_png(path, canvas);
}

void write_bar_chart(const std::filesystem::path& path, const std::string& title,
                     const std::vector<std::string>& categories, const std::vector<Series>& bars) {
  const int group_w = 40 + 24 * static_cast<int>(bars.size());
  const int width = std::max(480, 100 + group_w * static_cast<int>(categories.size()));
  const int height = 420;
  const int left = 60, top = 50, bottom = 80;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  put_text(img, title, {left, 25}, 0.6);
  double vmax = 0.0;
  for (const auto& b : bars) {
    for (double v : b.y) vmax = std::max(vmax, v);
  }
  if (vmax <= 0.0) vmax = 1.0;
  const int plot_h = height - top - bottom;
  cv::line(img, {left, top + plot_h}, {width - 20, top + plot_h}, kBlack, 1);
  put_text(img, short_number(vmax), {5, top + 10});
  for (size_t g = 0; g < categories.size(); ++g) {
    const int gx = left + 10 + static_cast<int>(g) * group_w;
    for (size_t b = 0; b < bars.size(); ++b) {
      const double v = g < bars[b].y.size() ? bars[b].y[g] : 0.0;
      const int bh = static_cast<int>(v / vmax * plot_h);
      const int bx = gx + static_cast<int>(b) * 24;
      cv::rectangle(img, cv::Rect(bx, top + plot_h - bh, 20, bh), kBarColors[b % kBarColors.size()], cv::FILLED);
    }
    put_text(img, categories[g], {gx, top + plot_h + 18}, 0.4);
  }
  for (size_t b = 0; b < bars.size(); ++b) {
    const int lx = left + static_cast<int>(b) * 140;
    cv::rectangle(img, cv::Rect(lx, height - 30, 12, 12), kBarColors[b % kBarColors.size()], cv::FILLED);
    put_text(img, bars[b].name, {lx + 16, height - 19}, 0.4);
  }
  write_png(path, img);
}

void write_points_csv(const std::filesystem::path& path, const Series& series, const std::string& x_label) {
  std::ofstream out(path);
  PISEG_CHECK(out, "cannot write " << path.string());
  out << x_label << ',' << series.name << '\n';
  char buf[64];
  for (size_t i = 0; i < series.x.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", series.x[i], series.y[i]);
    out << buf;
  }
}

}  // namespace piseg

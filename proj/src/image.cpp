#include "piseg/image.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

namespace piseg {

void Image::set_pixel(int y, int x, const Rgb8& rgb) {
  for (int c = 0; c < 3; ++c) at(y, x, c) = rgb[c] / 255.0;
}

Image read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  PISEG_CHECK(!bgr.empty(), "cannot read image: " << path.string());
  Image image(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      image.at(y, x, 0) = row[x][2] / 255.0;
      image.at(y, x, 1) = row[x][1] / 255.0;
      image.at(y, x, 2) = row[x][0] / 255.0;
    }
  }
  return image;
}

void write_image(const Image& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  auto to8 = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  for (int y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      row[x] = cv::Vec3b(to8(image.at(y, x, 2)), to8(image.at(y, x, 1)), to8(image.at(y, x, 0)));
    }
  }
  PISEG_CHECK(cv::imwrite(path.string(), bgr), "cannot write image: " << path.string());
}

SegmentationMap read_mask(const std::filesystem::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  PISEG_CHECK(!gray.empty(), "cannot read mask: " << path.string());
  PISEG_CHECK(gray.type() == CV_8UC1,
              "mask must be a single-channel 8-bit image: " << path.string());
  SegmentationMap mask(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y) {
    std::copy_n(gray.ptr<std::uint8_t>(y), gray.cols, &mask.labels[static_cast<size_t>(y) * gray.cols]);
  }
  return mask;
}

void write_mask(const SegmentationMap& mask, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat gray(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    std::copy_n(&mask.labels[static_cast<size_t>(y) * mask.width], mask.width, gray.ptr<std::uint8_t>(y));
  }
  PISEG_CHECK(cv::imwrite(path.string(), gray), "cannot write mask: " << path.string());
}

SegmentationMap downsample_majority(const SegmentationMap& mask, int factor) {
  PISEG_CHECK(factor >= 1, "downsample factor must be positive");
  PISEG_CHECK(mask.height % factor == 0 && mask.width % factor == 0,
              "mask " << mask.height << "x" << mask.width << " not divisible by " << factor);
  SegmentationMap out(mask.height / factor, mask.width / factor, kIgnoreIndex);
  std::array<int, 256> votes{};
  for (int gy = 0; gy < out.height; ++gy) {
    for (int gx = 0; gx < out.width; ++gx) {
      votes.fill(0);
      for (int y = gy * factor; y < (gy + 1) * factor; ++y) {
        for (int x = gx * factor; x < (gx + 1) * factor; ++x) ++votes[mask.at(y, x)];
      }
      int best = 0;
      int best_count = -1;
      bool tie = false;
      for (int label = 0; label < 256; ++label) {
        if (votes[label] > best_count) {
          best = label;
          best_count = votes[label];
          tie = false;
        } else if (votes[label] == best_count && best_count > 0) {
          tie = true;
        }
      }
      out.at(gy, gx) = tie ? kIgnoreIndex : static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace piseg

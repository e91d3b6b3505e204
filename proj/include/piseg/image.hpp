#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "piseg/common.hpp"

namespace piseg {

using Rgb8 = std::array<std::uint8_t, 3>;

/// H x W x 3 image with channel values in [0, 1], interleaved RGB.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  void set_pixel(int y, int x, const Rgb8& rgb);
};

/// H x W class indices; 255 marks ignored pixels.
struct SegmentationMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  SegmentationMap() = default;
  SegmentationMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), labels(static_cast<size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return labels.size(); }
  bool operator==(const SegmentationMap&) const = default;
};

Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

/// Masks are single-channel 8-bit PNGs holding class ids directly.
SegmentationMap read_mask(const std::filesystem::path& path);
void write_mask(const SegmentationMap& mask, const std::filesystem::path& path);

/// Majority vote over each factor x factor cell. Ties, and cells whose
/// winner is the ignore label, become ignore.
SegmentationMap downsample_majority(const SegmentationMap& mask, int factor);

}  // namespace piseg

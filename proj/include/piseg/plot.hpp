#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace piseg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Renders a single line chart to PNG.
void write_line_chart(const std::filesystem::path& path, const Series& series, const std::string& x_label);

/// Renders several line charts as a grid of panels (2 columns) to PNG.
void write_panel(const std::filesystem::path& path, const std::vector<Series>& series, const std::string& x_label);

/// Grouped bar chart: one group per category label, one bar per value series.
void write_bar_chart(const std::filesystem::path& path, const std::string& title,
                     const std::vector<std::string>& categories, const std::vector<Series>& bars);

/// "x_label,name" header followed by one row per point at full precision.
void write_points_csv(const std::filesystem::path& path, const Series& series, const std::string& x_label);

}  // namespace piseg

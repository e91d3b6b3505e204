#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "piseg/common.hpp"

namespace piseg {

/// Single-file container of named float64 tensors plus JSON metadata.
///
/// Layout (little-endian):
///   8 bytes   magic "PISEGCK1"
///   u64       metadata byte length, then UTF-8 JSON metadata
///   u64       tensor count
///   per tensor: u32 name length, name bytes, u64 rows, u64 cols,
///               rows * cols f64 values in row-major order
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat>> tensors;

  const Mat& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace piseg

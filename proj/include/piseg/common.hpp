#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace piseg {

// Dense row-major storage. Token tensors keep one token per row and one
// channel per column.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

inline constexpr std::uint8_t kIgnoreIndex = 255;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PISEG_CHECK(cond, msg)                           \
  do {                                                   \
    if (!(cond)) {                                       \
      std::ostringstream piseg_check_os_;                \
      piseg_check_os_ << msg;                            \
      throw ::piseg::Error(piseg_check_os_.str());       \
    }                                                    \
  } while (0)

inline bool all_finite(const Mat& m) { return m.allFinite(); }

struct GridSize {
  int height = 0;
  int width = 0;

  int area() const { return height * width; }
  bool operator==(const GridSize&) const = default;
};

}  // namespace piseg

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "memora/types.hpp"

namespace memora::harness {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Static SVG line chart with a fixed y range and an optional dashed
// horizontal reference line.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, double y_min, double y_max,
                           std::optional<double> reference = std::nullopt);

// Bar chart of bin counts over [lo, hi].
std::string histogram_svg(const std::string& title, const std::vector<int>& counts, double lo, double hi);

// Binary PGM (P5) tiling square images row by row; pixel values in [-1, 1]
// map to 0..255 and each pixel is drawn as a scale x scale block.
std::string pgm_grid(const Matrix& images, int image_size, int columns, int scale = 2);

}  // namespace memora::harness

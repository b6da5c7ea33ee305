// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace gridcast::cli {

/// Binary 8-bit PGM (P5) of row-major values in [0,1]; out-of-range values
/// are clamped.
void write_pgm(const std::string& path, std::size_t height, std::size_t width,
               const std::vector<double>& values);

struct Series {
  std::string label;
  std::vector<double> y;  // NaN entries leave a gap
  std::vector<double> err;  // optional ± band, same length as y
};

/// Line chart over x = 1..n with one polyline per series.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

}  // namespace gridcast::cli

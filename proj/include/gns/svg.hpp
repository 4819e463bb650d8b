#pragma once

// Self-contained SVG line charts and heat-map panels.

#include <string>
#include <vector>

namespace gns::svg {

struct Series {
  std::string name;
  std::vector<double> x, y;  // non-finite points are skipped
};

struct ChartOptions {
  std::string title, x_label, y_label;
  bool log_y = false;
  int width = 640, height = 400;
};

std::string line_chart(const std::vector<Series>& series, const ChartOptions& opts);

struct Field {
  int nx = 0, ny = 0;
  std::vector<double> values;  // node = iy * nx + ix
};

/// Grid of heat maps: one row per label in row_labels, one column per
/// col_labels entry; cells are row-major. Each row shares a colour range.
std::string heat_map_grid(const std::string& title, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& col_labels, const std::vector<Field>& cells,
                          int cell_px = 120);

}  // namespace gns::svg

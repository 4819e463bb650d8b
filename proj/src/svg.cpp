#include "gns/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "gns/errors.hpp"

namespace gns::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12,
                 const std::string& extra = "") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
         "\" text-anchor=\"" + anchor + "\"" + extra + ">" + escape(s) + "</text>\n";
}

/// Blue-white-red ramp on [-1, 1].
std::string diverging(double t) {
  t = std::clamp(t, -1.0, 1.0);
  int r, g, b;
  if (t < 0) {
    r = static_cast<int>(255 * (1 + t) + 59 * -t);
    g = static_cast<int>(255 * (1 + t) + 76 * -t);
    b = static_cast<int>(255 * (1 + t) + 192 * -t);
  } else {
    r = static_cast<int>(255 * (1 - t) + 180 * t);
    g = static_cast<int>(255 * (1 - t) + 4 * t);
    b = static_cast<int>(255 * (1 - t) + 38 * t);
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", std::clamp(r, 0, 255), std::clamp(g, 0, 255), std::clamp(b, 0, 255));
  return buf;
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const ChartOptions& o) {
  const double left = 70, right = 20, top = 40, bottom = 50;
  const double pw = o.width - left - right, ph = o.height - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto ty = [&](double y) { return o.log_y ? std::log10(y) : y; };
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ContractError("svg: series '" + s.name + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (o.log_y && !(s.y[i] > 0))) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  if (!o.log_y && y0 > 0 && y0 < 0.5 * y1) y0 = 0;
  const double pad = 0.05 * (y1 - y0);
  y0 -= o.log_y ? pad : (y0 == 0 ? 0 : pad);
  y1 += pad;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1 - (ty(y) - y0) / (y1 - y0)) * ph; };
  auto py_raw = [&](double v) { return top + (1 - (v - y0) / (y1 - y0)) * ph; };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(o.width) + "\" height=\"" +
                  std::to_string(o.height) + "\" font-family=\"sans-serif\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += text(o.width / 2.0, 22, o.title, "middle", 15);
  s += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5, yv = y0 + (y1 - y0) * i / 5;
    s += "<line x1=\"" + num(px(xv)) + "\" y1=\"" + num(top + ph) + "\" x2=\"" + num(px(xv)) + "\" y2=\"" +
         num(top + ph + 5) + "\" stroke=\"#444\"/>\n";
    s += text(px(xv), top + ph + 18, label(xv));
    s += "<line x1=\"" + num(left - 5) + "\" y1=\"" + num(py_raw(yv)) + "\" x2=\"" + num(left + pw) + "\" y2=\"" +
         num(py_raw(yv)) + "\" stroke=\"#ddd\"/>\n";
    s += text(left - 8, py_raw(yv) + 4, label(o.log_y ? std::pow(10.0, yv) : yv), "end");
  }
  s += text(left + pw / 2, o.height - 10, o.x_label);
  s += text(16, top + ph / 2, o.y_label, "middle", 12,
            " transform=\"rotate(-90 16 " + num(top + ph / 2) + ")\"");

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& ser = series[k];
    const char* colour = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i]) || (o.log_y && !(ser.y[i] > 0))) continue;
      pts += num(px(ser.x[i])) + "," + num(py(ser.y[i])) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.8\" points=\"" + pts + "\"/>\n";
    const double ly = top + 16 + 16 * k;
    s += "<line x1=\"" + num(left + pw - 110) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(left + pw - 90) +
         "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    s += text(left + pw - 85, ly, ser.name, "start");
  }
  s += "</svg>\n";
  return s;
}

std::string heat_map_grid(const std::string& title, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& col_labels, const std::vector<Field>& cells, int cell_px) {
  const std::size_t rows = row_labels.size(), cols = col_labels.size();
  if (cells.size() != rows * cols) throw ContractError("svg: heat map grid needs rows * cols fields");
  const double left = 80, top = 50, gap = 10, legend = 30;
  const double w = left + cols * (cell_px + gap) + legend + 40, h = top + rows * (cell_px + gap) + 10;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
                  "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += text(w / 2, 20, title, "middle", 15);
  for (std::size_t c = 0; c < cols; ++c) s += text(left + c * (cell_px + gap) + cell_px / 2.0, top - 8, col_labels[c]);
  for (std::size_t r = 0; r < rows; ++r) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t c = 0; c < cols; ++c) {
      for (double v : cells[r * cols + c].values) {
        if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
      }
    }
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    const double mid = 0.5 * (lo + hi), half = std::max(0.5 * (hi - lo), 1e-300);
    const double y = top + r * (cell_px + gap);
    s += text(left - 8, y + cell_px / 2.0, row_labels[r], "end");
    for (std::size_t c = 0; c < cols; ++c) {
      const auto& f = cells[r * cols + c];
      if (f.values.size() != static_cast<std::size_t>(f.nx) * f.ny) throw ContractError("svg: field size mismatch");
      const double x = left + c * (cell_px + gap);
      const double dx = static_cast<double>(cell_px) / f.nx, dy = static_cast<double>(cell_px) / f.ny;
      for (int iy = 0; iy < f.ny; ++iy) {
        for (int ix = 0; ix < f.nx; ++ix) {
          const double v = f.values[iy * f.nx + ix];
          // y increases upwards.
          s += "<rect x=\"" + num(x + ix * dx) + "\" y=\"" + num(y + (f.ny - 1 - iy) * dy) + "\" width=\"" +
               num(dx + 0.3) + "\" height=\"" + num(dy + 0.3) + "\" fill=\"" + diverging((v - mid) / half) + "\"/>\n";
        }
      }
    }
    const double lx = left + cols * (cell_px + gap);
    for (int i = 0; i < 20; ++i) {
      s += "<rect x=\"" + num(lx) + "\" y=\"" + num(y + i * cell_px / 20.0) + "\" width=\"12\" height=\"" +
           num(cell_px / 20.0 + 0.3) + "\" fill=\"" + diverging(1.0 - 2.0 * (i + 0.5) / 20) + "\"/>\n";
    }
    s += text(lx + 16, y + 10, label(hi), "start", 10);
    s += text(lx + 16, y + cell_px, label(lo), "start", 10);
  }
  s += "</svg>\n";
  return s;
}

}  // namespace gns::svg

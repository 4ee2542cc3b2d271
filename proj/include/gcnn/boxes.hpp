#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gcnn/error.hpp"

namespace gcnn {

/// Axis-aligned box in input pixels: top-left (x, y), extent (w, h).
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  bool valid() const { return w > 0 && h > 0 && std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h); }
  bool operator==(const BBox&) const = default;
};

inline double intersection_area(const BBox& a, const BBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  return (iw > 0 && ih > 0) ? iw * ih : 0.0;
}

inline double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

/// Parses "x,y,w,h" lines; blank lines and '#' comments are skipped. Extra
/// comma-separated fields (e.g. a score) are ignored.
inline std::vector<BBox> parse_boxes(std::istream& is, const std::string& source = "annotations") {
  std::vector<BBox> boxes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    BBox b;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &b.x, &b.y, &b.w, &b.h) != 4 || !b.valid())
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected x,y,w,h with positive w,h");
    boxes.push_back(b);
  }
  return boxes;
}

inline std::vector<BBox> read_boxes_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path);
  return parse_boxes(is, path);
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_boxes_file(const std::string& path, const std::vector<BBox>& boxes) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto& b : boxes)
    os << format_number(b.x) << ',' << format_number(b.y) << ',' << format_number(b.w) << ','
       << format_number(b.h) << '\n';
}

}  // namespace gcnn

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gcnn/binary_io.hpp"
#include "gcnn/error.hpp"
#include "gcnn/image_io.hpp"

namespace gcnn {

inline constexpr std::size_t kDefaultCellSize = 32;

/// Coarse boolean grid; one cell stands for a cell_size x cell_size block of
/// input pixels.
struct GuidanceMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t cell_size = kDefaultCellSize;
  std::vector<std::uint8_t> cells;  // 0/1, row-major

  GuidanceMask() = default;
  GuidanceMask(std::size_t r, std::size_t c, bool fill = false, std::size_t cell = kDefaultCellSize)
      : rows(r), cols(c), cell_size(cell), cells(r * c, fill ? 1 : 0) {}

  /// Grid covering an image: ceil(image / cell_size) in each direction.
  static GuidanceMask for_image(std::size_t image_h, std::size_t image_w, bool fill = false,
                                std::size_t cell = kDefaultCellSize) {
    if (cell == 0) throw ValueError("cell size must be positive");
    return GuidanceMask((image_h + cell - 1) / cell, (image_w + cell - 1) / cell, fill, cell);
  }

  bool at(std::size_t y, std::size_t x) const { return cells[y * cols + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) { cells[y * cols + x] = v ? 1 : 0; }
  std::size_t size() const { return cells.size(); }
  std::size_t count() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1)); }
  double area_ratio() const { return cells.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(cells.size()); }
  bool operator==(const GuidanceMask&) const = default;
};

/// A mask resampled to one feature-map resolution.
struct MaskView {
  std::size_t h = 0;
  std::size_t w = 0;
  double stride = 1.0;  // input pixels per feature cell
  std::vector<std::uint8_t> cells;

  MaskView() = default;
  MaskView(std::size_t hh, std::size_t ww, bool fill = false, double s = 1.0)
      : h(hh), w(ww), stride(s), cells(hh * ww, fill ? 1 : 0) {}

  bool at(std::size_t y, std::size_t x) const { return cells[y * w + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) { cells[y * w + x] = v ? 1 : 0; }
  std::size_t size() const { return cells.size(); }
  std::size_t count() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1)); }
  double area_ratio() const { return cells.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(cells.size()); }

  /// Row-major flat indices of the true cells.
  std::vector<std::uint32_t> locations() const {
    std::vector<std::uint32_t> out;
    out.reserve(count());
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (cells[i]) out.push_back(static_cast<std::uint32_t>(i));
    return out;
  }
  bool operator==(const MaskView& o) const { return h == o.h && w == o.w && cells == o.cells; }
};

/// How a mask cell's pixel footprint is anchored.
///  kCorner:   cell y covers pixels [y*s, (y+1)*s).
///  kCentered: cell y covers pixels [y*s - s/2, y*s + s/2), the footprint the
///             ground-truth rule in gt_mask_from_boxes labels.
enum class MaskAnchor { kCorner, kCentered };

/// Maps each feature location's pixel centre to the mask cell containing it
/// (clamped to the grid).
inline MaskView mask_project(const GuidanceMask& mask, std::size_t feature_h, std::size_t feature_w,
                             std::size_t image_h, std::size_t image_w,
                             MaskAnchor anchor = MaskAnchor::kCorner) {
  if (feature_h == 0 || feature_w == 0) throw DimensionError("feature dims must be >= 1");
  if (mask.rows == 0 || mask.cols == 0) throw DimensionError("cannot project an empty mask");
  const double sy = static_cast<double>(image_h) / static_cast<double>(feature_h);
  const double sx = static_cast<double>(image_w) / static_cast<double>(feature_w);
  const double cell = static_cast<double>(mask.cell_size);
  const double shift = anchor == MaskAnchor::kCentered ? cell / 2 : 0.0;
  auto to_cell = [&](std::size_t i, double s, std::size_t n) {
    const double centre = (static_cast<double>(i) + 0.5) * s;
    const double c = std::floor((centre + shift) / cell);
    return static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(n - 1)));
  };
  std::vector<std::size_t> cy(feature_h), cx(feature_w);
  for (std::size_t y = 0; y < feature_h; ++y) cy[y] = to_cell(y, sy, mask.rows);
  for (std::size_t x = 0; x < feature_w; ++x) cx[x] = to_cell(x, sx, mask.cols);
  MaskView v(feature_h, feature_w, false, sy);
  for (std::size_t y = 0; y < feature_h; ++y)
    for (std::size_t x = 0; x < feature_w; ++x) v.set(y, x, mask.at(cy[y], cx[x]));
  return v;
}

/// Grows true cells by a Chebyshev radius.
inline MaskView mask_dilate(const MaskView& view, std::size_t radius) {
  if (radius == 0) return view;
  MaskView out(view.h, view.w, false, view.stride);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto H = static_cast<std::ptrdiff_t>(view.h), W = static_cast<std::ptrdiff_t>(view.w);
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      if (!view.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x))) continue;
      for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(0, y - r); yy <= std::min(H - 1, y + r); ++yy)
        for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(0, x - r); xx <= std::min(W - 1, x + r); ++xx)
          out.set(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), true);
    }
  return out;
}

// .gcm layout: "GCM1", u32 rows, u32 cols, u32 cell_size, rows*cols bytes of 0/1.
inline void write_mask(std::ostream& os, const GuidanceMask& m) {
  os.write("GCM1", 4);
  binio::put_le(os, static_cast<std::uint32_t>(m.rows));
  binio::put_le(os, static_cast<std::uint32_t>(m.cols));
  binio::put_le(os, static_cast<std::uint32_t>(m.cell_size));
  os.write(reinterpret_cast<const char*>(m.cells.data()), static_cast<std::streamsize>(m.cells.size()));
}

inline GuidanceMask read_mask(std::istream& is) {
  binio::expect_magic(is, "GCM1");
  GuidanceMask m;
  m.rows = binio::get_le<std::uint32_t>(is, "mask header");
  m.cols = binio::get_le<std::uint32_t>(is, "mask header");
  m.cell_size = binio::get_le<std::uint32_t>(is, "mask header");
  if (m.cell_size == 0) throw FormatError("mask cell size is zero");
  m.cells.resize(m.rows * m.cols);
  if (!is.read(reinterpret_cast<char*>(m.cells.data()), static_cast<std::streamsize>(m.cells.size())))
    throw FormatError("truncated payload while reading mask cells");
  for (auto c : m.cells)
    if (c > 1) throw FormatError("mask cell byte must be 0 or 1");
  return m;
}

inline void write_mask_file(const std::string& path, const GuidanceMask& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_mask(os, m);
}

inline GuidanceMask read_mask_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path);
  return read_mask(is);
}

/// One pixel per cell, 0 or 255.
inline Image8 mask_to_image(const GuidanceMask& m) {
  Image8 img(m.cols, m.rows);
  for (std::size_t i = 0; i < m.cells.size(); ++i) img.pixels[i] = m.cells[i] ? 255 : 0;
  return img;
}

inline GuidanceMask mask_from_image(const Image8& img, std::size_t cell_size = kDefaultCellSize) {
  GuidanceMask m(img.height, img.width, false, cell_size);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m.cells[i] = img.pixels[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace gcnn

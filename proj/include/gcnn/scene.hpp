#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "gcnn/boxes.hpp"
#include "gcnn/dataset.hpp"
#include "gcnn/error.hpp"
#include "gcnn/image_io.hpp"
#include "gcnn/rng.hpp"

namespace gcnn {

/// Text-area ratio buckets (0,10%], ..., (40%,50%] and how often each is drawn.
inline constexpr std::array<double, 6> kBucketEdges{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
inline constexpr std::array<double, 5> kBucketWeights{57, 21, 11, 6, 5};

struct SceneSpec {
  std::size_t width = 256;
  std::size_t height = 256;
  int bucket = -1;  // 0..4; -1 draws one with kBucketWeights
  std::size_t min_boxes = 1;
  std::size_t max_boxes = 64;
  std::size_t min_box_w = 20, max_box_w = 48;
  std::size_t min_box_h = 14, max_box_h = 32;
  // Text stays out of the last `margin` rows and columns. The ground-truth
  // mask grid ends 16 px before a multiple-of-32 border.
  std::size_t margin = 16;
  std::size_t gap = 4;  // minimum spacing between two boxes
  std::size_t stripe_period = 4;
  double noise = 12.0;  // background noise amplitude in gray levels
  std::size_t clutter = 3;  // at most this many flat distractor rectangles
  double tolerance = 0.05;  // allowed |realized - target| text-area ratio
  std::uint64_t seed = 1;

  void validate() const {
    auto bad = [](const std::string& m) { throw ValueError("scene spec: " + m); };
    if (width == 0 || height == 0) bad("image size must be positive");
    if (bucket < -1 || bucket > 4) bad("bucket must be -1 or 0..4");
    if (min_boxes > max_boxes) bad("min_boxes exceeds max_boxes");
    if (min_box_w == 0 || min_box_h == 0 || min_box_w > max_box_w || min_box_h > max_box_h) bad("bad box size range");
    if (margin + max_box_w > width || margin + max_box_h > height) bad("boxes do not fit in the image");
    if (stripe_period < 2) bad("stripe_period must be >= 2");
    if (!(noise >= 0)) bad("noise must be >= 0");
    if (!(tolerance > 0 && tolerance < 1)) bad("tolerance must lie in (0, 1)");
  }
};

struct Scene {
  Image8 image;
  std::vector<BBox> boxes;
  int bucket = 0;
  double target_ratio = 0;
};

/// Fraction of the image covered by (non-overlapping) boxes.
inline double text_area_ratio(const std::vector<BBox>& boxes, std::size_t width, std::size_t height) {
  double a = 0;
  for (const auto& b : boxes) a += b.area();
  return a / (static_cast<double>(width) * static_cast<double>(height));
}

namespace detail {

inline std::uint8_t clamp_gray(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// One attempt at placing text. Text comes in blocks of up to four stacked
// lines; a line is a horizontal band of fixed height holding words left to
// right. Bands never come closer than `gap`. The planned line length follows
// the remaining area, so sparse scenes get a few short lines and dense
// scenes get full-width paragraphs. Returns false if the area target or the
// box-count range was not met.
inline bool place_boxes(const SceneSpec& s, double target, std::mt19937_64& rng, std::vector<BBox>& out) {
  const double image_area = static_cast<double>(s.width) * static_cast<double>(s.height);
  const double goal = target * image_area;
  const double ceiling = (target + s.tolerance / 2) * image_area;
  const double span_w = static_cast<double>(s.width - s.margin), span_h = static_cast<double>(s.height - s.margin);
  const double gap = static_cast<double>(s.gap);
  std::uniform_int_distribution<std::size_t> dw(s.min_box_w, s.max_box_w), dh(s.min_box_h, s.max_box_h);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<double, double>> bands;
  out.clear();
  double area = 0;
  auto done = [&] { return out.size() >= s.max_boxes || (area >= goal && out.size() >= s.min_boxes); };
  auto band_free = [&](double y, double h) {
    return y >= 0 && y + h <= span_h && std::none_of(bands.begin(), bands.end(), [&](const auto& b) {
             return y < b.second + gap && b.first < y + h + gap;
           });
  };
  // Fills one line starting at x; returns false if no word fit.
  auto fill_line = [&](double x, double y, double h, double len) {
    const double line_end = std::min(x + len, span_w);
    bool placed = false;
    while (!done()) {
      std::size_t w = dw(rng);
      if (area + static_cast<double>(w) * h > ceiling) w = static_cast<std::size_t>((ceiling - area) / h);
      w = std::min<std::size_t>(w, static_cast<std::size_t>(std::max(0.0, span_w - x)));
      if (w < s.min_box_w) break;
      out.push_back(BBox{x, y, static_cast<double>(w), h});
      area += static_cast<double>(w) * h;
      placed = true;
      x += static_cast<double>(w) + gap + std::floor(u(rng) * 2 * gap);
      if (x >= line_end) break;
    }
    if (placed) bands.emplace_back(y, y + h);
    return placed;
  };
  for (int attempt = 0; attempt < 400 && !done(); ++attempt) {
    const std::size_t lines = 1 + static_cast<std::size_t>(u(rng) * 4);
    const double h = static_cast<double>(dh(rng));
    double y = std::floor(u(rng) * (span_h - h + 1));
    if (!band_free(y, h)) continue;
    const double per_line = std::max(goal - area, 0.0) / h / static_cast<double>(lines) * (1.2 + u(rng));
    const double len = std::clamp(per_line, static_cast<double>(s.min_box_w), span_w);
    const double x0 = std::floor(u(rng) * (span_w - len + 1));
    for (std::size_t li = 0; li < lines && !done(); ++li) {
      const double x = std::clamp(x0 + std::floor((u(rng) - 0.5) * 2 * gap), 0.0, span_w - static_cast<double>(s.min_box_w));
      if (!fill_line(x, y, h, len)) break;
      y += h + gap + std::floor(u(rng) * gap);
      if (!band_free(y, h)) break;
    }
  }
  return out.size() >= s.min_boxes && std::abs(area / image_area - target) <= s.tolerance;
}

}  // namespace detail

/// Draws the image for a given box layout. Pixels inside a box follow an
/// exact vertical stripe pattern (ink, paper) with period spec.stripe_period;
/// everything else is a noisy ramp with a few flat distractor rectangles.
inline Image8 render_scene(const SceneSpec& s, const std::vector<BBox>& boxes) {
  std::mt19937_64 rng(derive_seed(s.seed, 2));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double base = 70 + 115 * u(rng);
  const double gx = (u(rng) - 0.5) * 60 / static_cast<double>(s.width);
  const double gy = (u(rng) - 0.5) * 60 / static_cast<double>(s.height);
  Image8 img(s.width, s.height);
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x)
      img.at(y, x) = detail::clamp_gray(base + gx * static_cast<double>(x) + gy * static_cast<double>(y) +
                                        s.noise * (2 * u(rng) - 1));

  const std::size_t n_clutter = s.clutter ? std::uniform_int_distribution<std::size_t>(0, s.clutter)(rng) : 0;
  for (std::size_t k = 0; k < n_clutter; ++k) {
    const std::size_t w = 8 + static_cast<std::size_t>(u(rng) * 56), h = 8 + static_cast<std::size_t>(u(rng) * 56);
    const std::size_t x0 = static_cast<std::size_t>(u(rng) * static_cast<double>(s.width));
    const std::size_t y0 = static_cast<std::size_t>(u(rng) * static_cast<double>(s.height));
    const double level = 255 * u(rng);
    for (std::size_t y = y0; y < std::min(s.height, y0 + h); ++y)
      for (std::size_t x = x0; x < std::min(s.width, x0 + w); ++x)
        img.at(y, x) = detail::clamp_gray(level + s.noise * (2 * u(rng) - 1));
  }

  const std::size_t half = s.stripe_period / 2;
  for (const auto& b : boxes) {
    const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
    const std::uint8_t ink = detail::clamp_gray(base + sign * (70 + 40 * u(rng)));
    const std::uint8_t paper = detail::clamp_gray(base - sign * 10);
    const auto bx = static_cast<std::size_t>(b.x), by = static_cast<std::size_t>(b.y);
    for (std::size_t y = by; y < by + static_cast<std::size_t>(b.h); ++y)
      for (std::size_t x = bx; x < bx + static_cast<std::size_t>(b.w); ++x)
        img.at(y, x) = ((x - bx) % s.stripe_period) < half ? ink : paper;
  }
  return img;
}

/// Samples a target ratio from the scene's bucket, places integer boxes
/// without overlap until the realized ratio is within tolerance of it, and
/// renders the image. Deterministic per spec.seed.
inline Scene gen_scene(const SceneSpec& s) {
  s.validate();
  std::mt19937_64 rng(derive_seed(s.seed, 1));
  Scene sc;
  sc.bucket = s.bucket >= 0 ? s.bucket
                            : static_cast<int>(std::discrete_distribution<int>(kBucketWeights.begin(),
                                                                               kBucketWeights.end())(rng));
  const double lo = kBucketEdges[static_cast<std::size_t>(sc.bucket)];
  const double hi = kBucketEdges[static_cast<std::size_t>(sc.bucket) + 1];
  sc.target_ratio = hi - (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);

  const double image_area = static_cast<double>(s.width) * static_cast<double>(s.height);
  const double usable = static_cast<double>((s.width - s.margin) * (s.height - s.margin));
  const double min_area = static_cast<double>(s.min_box_w * s.min_box_h);
  const double max_area = static_cast<double>(s.max_box_w * s.max_box_h);
  const double need = (sc.target_ratio - s.tolerance) * image_area;
  const double allow = (sc.target_ratio + s.tolerance) * image_area;
  if (static_cast<double>(s.max_boxes) * max_area < need || static_cast<double>(s.min_boxes) * min_area > allow ||
      need > usable) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "infeasible scene spec: ratio %.3f cannot be reached with %zu..%zu boxes", sc.target_ratio,
                  s.min_boxes, s.max_boxes);
    throw ValueError(buf);
  }
  for (int tries = 0; tries < 50; ++tries)
    if (detail::place_boxes(s, sc.target_ratio, rng, sc.boxes)) {
      sc.image = render_scene(s, sc.boxes);
      return sc;
    }
  char buf[160];
  std::snprintf(buf, sizeof buf, "infeasible scene spec: could not place boxes for ratio %.3f in %zux%zu", sc.target_ratio,
                s.width, s.height);
  throw ValueError(buf);
}

/// `count` scenes named img_00000, img_00001, ...; scene i uses a seed
/// derived from (seed, i).
inline Dataset make_dataset(std::size_t count, SceneSpec spec, std::uint64_t seed) {
  Dataset data(count);
  for (std::size_t i = 0; i < count; ++i) {
    spec.seed = derive_seed(seed, i);
    Scene sc = gen_scene(spec);
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu", i);
    data[i] = Sample{name, std::move(sc.image), std::move(sc.boxes)};
  }
  return data;
}

}  // namespace gcnn

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gcnn/csv.hpp"
#include "gcnn/guided.hpp"
#include "gcnn/ops.hpp"
#include "gcnn/parallel.hpp"
#include "gcnn/pipeline.hpp"
#include "gcnn/scene.hpp"
#include "gcnn/synthesis.hpp"

namespace gcnn {

struct BenchSettings {
  std::vector<double> ratios{1.0, 0.5, 0.25, 0.125};
  std::vector<int> threads{1};
  std::size_t runs = 20;
  std::size_t warmup = 3;
  std::size_t channels = 64;
  std::size_t size = 256;
  std::size_t layers = 1;
  double plus_p = 0.8;
  std::uint64_t seed = 1;
};

/// One timed configuration. `ratio` is what was asked for, `area_ratio` what
/// the block mask actually covers (it is rounded to whole 32 px blocks).
struct BenchRecord {
  std::string layer;
  Mode mode = Mode::kDense;
  double ratio = 1.0;
  double area_ratio = 1.0;
  int threads = 1;
  std::uint64_t macs = 0;
  std::uint64_t dense_macs = 0;
  std::size_t runs = 0;
  double median_ns = 0;
  double dense_median_ns = 0;

  double speedup() const { return median_ns > 0 ? dense_median_ns / median_ns : 0.0; }
};

/// Median of `runs` timings of fn() after `warmup` untimed calls.
template <typename F>
double median_ns(F&& fn, std::size_t runs, std::size_t warmup) {
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> t(std::max<std::size_t>(runs, 1));
  for (auto& v : t) {
    const auto t0 = clock::now();
    fn();
    v = std::chrono::duration<double, std::nano>(clock::now() - t0).count();
  }
  std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2), t.end());
  double m = t[t.size() / 2];
  if (t.size() % 2 == 0) m = (m + *std::max_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2))) / 2;
  return m;
}

/// Mask over a size x size map made of 32 px blocks: round(ratio * blocks)
/// blocks, chosen by a seeded shuffle. Returned at full feature resolution.
inline MaskView block_mask_view(std::size_t size, double ratio, std::uint64_t seed, std::size_t block = 32) {
  const GuidanceMask grid = GuidanceMask::for_image(size, size, false, block);
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  GuidanceMask m = grid;
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(grid.size())));
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) m.cells[order[i]] = 1;
  return mask_project(m, size, size, size, size);
}

namespace detail {

struct BenchStack {
  std::vector<ConvLayer<float>> layers;
  Tensor<float> input;
};

inline BenchStack make_bench_stack(const BenchSettings& s) {
  BenchStack st;
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  st.input = Tensor<float>(1, s.channels, s.size, s.size);
  for (std::size_t i = 0; i < st.input.size(); ++i) st.input[i] = u(rng);
  for (std::size_t l = 0; l < s.layers; ++l) {
    auto layer = ConvLayer<float>::make(s.channels, s.channels, 3, 3, 1, 1);
    const float scale = 1.0f / std::sqrt(static_cast<float>(layer.patch_size()));
    for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.weights[i] = u(rng) * scale;
    for (auto& b : layer.bias) b = u(rng) * 0.1f;
    st.layers.push_back(std::move(layer));
  }
  return st;
}

inline Tensor<float> run_stack(const BenchStack& st, Mode mode, const MaskView& view, double plus_p) {
  Tensor<float> x = st.input;
  for (const auto& l : st.layers) {
    switch (mode) {
      case Mode::kDense: x = relu(dense_conv2d(x, l)); break;
      case Mode::kGuided: x = guided_pointwise(PointwiseOp::kRelu, guided_conv2d(x, l, view), view); break;
      case Mode::kGuidedPlus: x = relu(dense_conv2d(scale_background(x, view, plus_p), l)); break;
    }
  }
  return x;
}

}  // namespace detail

/// Times dense, guided and guided-plus 3x3 conv+relu stacks for every
/// (thread count, mask ratio) pair. Rows come out in (threads, ratio, mode)
/// order. The dense timing is taken once per thread count and shared by its
/// rows since it does not depend on the mask.
inline std::vector<BenchRecord> run_bench(const BenchSettings& s) {
  if (s.channels == 0 || s.size == 0 || s.layers == 0) throw ValueError("bench: channels, size and layers must be >= 1");
  const auto st = detail::make_bench_stack(s);
  const std::string id = "conv3x3_c" + std::to_string(s.channels) + "_" + std::to_string(s.size) + "x" +
                         std::to_string(s.size) + "_l" + std::to_string(s.layers);
  const Shape os{1, s.channels, s.size, s.size};
  std::uint64_t dense_macs = 0;
  for (const auto& l : st.layers) dense_macs += flop_count(l, os);

  std::vector<BenchRecord> out;
  for (int threads : s.threads) {
    ScopedThreads scope(threads);
    const MaskView full(s.size, s.size, true);
    const double dense_ns = median_ns([&] { detail::run_stack(st, Mode::kDense, full, 1.0); }, s.runs, s.warmup);
    for (double ratio : s.ratios) {
      const MaskView view = block_mask_view(s.size, ratio, derive_seed(s.seed, 7));
      std::uint64_t guided_macs = 0;
      for (const auto& l : st.layers) guided_macs += flop_count(l, os, view);
      for (Mode mode : {Mode::kDense, Mode::kGuided, Mode::kGuidedPlus}) {
        BenchRecord r;
        r.layer = id;
        r.mode = mode;
        r.ratio = ratio;
        r.area_ratio = view.area_ratio();
        r.threads = threads;
        r.dense_macs = dense_macs;
        r.macs = mode == Mode::kGuided ? guided_macs : dense_macs;
        r.runs = s.runs;
        r.dense_median_ns = dense_ns;
        r.median_ns = mode == Mode::kDense
                          ? dense_ns
                          : median_ns([&] { detail::run_stack(st, mode, view, s.plus_p); }, s.runs, s.warmup);
        out.push_back(r);
      }
    }
  }
  return out;
}

inline CsvTable bench_table(const std::vector<BenchRecord>& rows) {
  const std::string nd = kNondeterministicSuffix;
  CsvTable t({"layer", "mode", "ratio", "area_ratio", "threads", "runs", "macs", "dense_macs", "mac_ratio",
              "median_ns" + nd, "speedup" + nd});
  for (const auto& r : rows)
    t.row({r.layer, to_string(r.mode), num(r.ratio), num(r.area_ratio), num(r.threads), num(r.runs), num(r.macs),
           num(r.dense_macs), num(static_cast<double>(r.macs) / static_cast<double>(r.dense_macs)), num(r.median_ns),
           num(r.speedup())});
  return t;
}

/// Where end-to-end inference time goes: guidance net versus detector.
struct RuntimeSplit {
  Mode mode = Mode::kGuided;
  std::size_t images = 0;
  double guidance_seconds = 0;
  double detector_seconds = 0;
  std::uint64_t macs = 0;
  std::uint64_t dense_macs = 0;
  double mask_area = 0;

  double guidance_share() const {
    const double t = guidance_seconds + detector_seconds;
    return t > 0 ? guidance_seconds / t : 0.0;
  }
};

/// Runs the full pipeline on `data` once per mode and reports the runtime split.
inline std::vector<RuntimeSplit> run_pipeline_split(const Dataset& data, const ToyDetectorParams<float>& det,
                                                    const GuidanceNetParams<float>& guidance, InferenceConfig cfg) {
  std::vector<RuntimeSplit> out;
  for (Mode mode : {Mode::kDense, Mode::kGuided, Mode::kGuidedPlus}) {
    cfg.mode = mode;
    // Timings per image are serial so the split is not blurred by the image loop.
    RuntimeSplit r;
    r.mode = mode;
    r.images = data.size();
    for (const auto& s : data) {
      const auto res = detect_image(s.image, det, &guidance, cfg);
      r.guidance_seconds += res.guidance_seconds;
      r.detector_seconds += res.detector_seconds;
      r.macs += res.macs;
      r.dense_macs += res.dense_macs;
      if (mode != Mode::kDense) r.mask_area += res.mask.area_ratio();
    }
    if (!data.empty()) r.mask_area /= static_cast<double>(data.size());
    out.push_back(r);
  }
  return out;
}

inline CsvTable split_table(const std::vector<RuntimeSplit>& rows) {
  const std::string nd = kNondeterministicSuffix;
  CsvTable t({"mode", "images", "mask_area", "macs", "dense_macs", "guidance_seconds" + nd, "detector_seconds" + nd,
              "guidance_share" + nd});
  for (const auto& r : rows)
    t.row({to_string(r.mode), num(r.images), num(r.mask_area), num(r.macs), num(r.dense_macs), num(r.guidance_seconds),
           num(r.detector_seconds), num(r.guidance_share())});
  return t;
}

}  // namespace gcnn

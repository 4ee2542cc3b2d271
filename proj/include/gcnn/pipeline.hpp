#pragma once

#include <chrono>
#include <cstdint>
#include <vector>

#include "gcnn/dataset.hpp"
#include "gcnn/detector.hpp"
#include "gcnn/guidance_net.hpp"
#include "gcnn/parallel.hpp"

namespace gcnn {

/// Test-time settings: which mode, the guidance threshold, the guided-plus
/// background scale and the decoding thresholds.
struct InferenceConfig {
  Mode mode = Mode::kGuided;
  double tau = 0.2;
  double plus_p = 0.8;
  std::size_t dilate = 0;  // extra feature cells around the projected mask
  DecodeConfig decode{};
};

struct ImageResult {
  std::vector<Detection> detections;
  GuidanceMask mask;            // predicted mask (empty in dense mode)
  std::uint64_t macs = 0;       // primary detector MACs actually computed
  std::uint64_t dense_macs = 0;
  double guidance_seconds = 0;
  double detector_seconds = 0;
};

/// MACs of a dense detector pass on an h x w input.
template <typename T>
std::uint64_t detector_dense_macs(const ToyDetectorParams<T>& p, std::size_t h, std::size_t w) {
  std::uint64_t macs = 0;
  Shape s{1, 1, h, w};
  for (const auto* l : p.layers()) {
    s = l->output_shape(s);
    macs += flop_count(*l, s);
  }
  return macs;
}

/// Guidance net, binarization, detector and decoding for one image. The
/// image is zero-padded to a multiple of 32 first.
inline ImageResult detect_image(const Image8& image, const ToyDetectorParams<float>& det,
                                const GuidanceNetParams<float>* guidance, const InferenceConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const Image8 padded = pad_to_multiple(image, 32);
  const auto x = image_to_tensor<float>(padded);
  ImageResult r;
  const auto t0 = clock::now();
  if (cfg.mode != Mode::kDense) {
    if (!guidance) throw ValueError(to_string(cfg.mode) + " inference needs a guidance network");
    r.mask = binarize(guidance_forward(x, *guidance), cfg.tau);
  }
  const auto t1 = clock::now();
  const auto run = detector_forward(x, det, cfg.mode, cfg.mode == Mode::kDense ? nullptr : &r.mask, cfg.plus_p,
                                    MaskAnchor::kCentered, cfg.dilate);
  // Guided mode never evaluated the background cells, so they cannot emit boxes.
  r.detections = decode_and_nms(run.head, cfg.mode == Mode::kGuided ? &run.computed : nullptr, cfg.decode);
  const auto t2 = clock::now();
  r.macs = run.macs;
  r.dense_macs = detector_dense_macs(det, padded.height, padded.width);
  r.guidance_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.detector_seconds = std::chrono::duration<double>(t2 - t1).count();
  return r;
}

struct EvalSummary {
  EvalCounts counts;
  std::uint64_t macs = 0;
  std::uint64_t dense_macs = 0;
  double mask_area = 0;  // mean predicted mask area ratio (0 in dense mode)
  double guidance_seconds = 0;
  double detector_seconds = 0;

  double mac_ratio() const { return dense_macs ? static_cast<double>(macs) / static_cast<double>(dense_macs) : 0.0; }
};

/// Runs detect_image on every sample (image-parallel) and pools the
/// matching counts and MACs in sample order.
inline EvalSummary evaluate_dataset(const Dataset& data, const ToyDetectorParams<float>& det,
                                    const GuidanceNetParams<float>* guidance, const InferenceConfig& cfg,
                                    std::vector<ImageResult>* per_image = nullptr) {
  std::vector<ImageResult> results(data.size());
  std::vector<EvalCounts> counts(data.size());
#pragma omp parallel for schedule(dynamic) num_threads(num_threads())
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(data.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    results[k] = detect_image(data[k].image, det, guidance, cfg);
    counts[k] = evaluate(results[k].detections, data[k].boxes);
  }
  EvalSummary s;
  for (std::size_t i = 0; i < data.size(); ++i) {
    s.counts += counts[i];
    s.macs += results[i].macs;
    s.dense_macs += results[i].dense_macs;
    if (cfg.mode != Mode::kDense) s.mask_area += results[i].mask.area_ratio();
    s.guidance_seconds += results[i].guidance_seconds;
    s.detector_seconds += results[i].detector_seconds;
  }
  if (!data.empty()) s.mask_area /= static_cast<double>(data.size());
  if (per_image) *per_image = std::move(results);
  return s;
}

}  // namespace gcnn

#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <span>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gcnn/boxes.hpp"
#include "gcnn/conv.hpp"
#include "gcnn/dataset.hpp"
#include "gcnn/mask.hpp"
#include "gcnn/network.hpp"
#include "gcnn/ops.hpp"
#include "gcnn/parallel.hpp"
#include "gcnn/rng.hpp"

namespace gcnn {

/// Ground-truth guidance: cell (y, x) is true iff the cell_size square whose
/// top-left corner is (cell*y - cell/2, cell*x - cell/2), clipped to the
/// image, overlaps some box with positive area.
inline GuidanceMask gt_mask_from_boxes(std::size_t image_w, std::size_t image_h,
                                       const std::vector<BBox>& boxes,
                                       std::size_t cell_size = kDefaultCellSize) {
  if (image_w == 0 || image_h == 0) throw DimensionError("image dims must be >= 1");
  GuidanceMask m = GuidanceMask::for_image(image_h, image_w, false, cell_size);
  const double cell = static_cast<double>(cell_size);
  const double half = cell / 2;
  for (std::size_t y = 0; y < m.rows; ++y) {
    const double r0 = std::max(0.0, cell * static_cast<double>(y) - half);
    const double r1 = std::min(static_cast<double>(image_h), cell * static_cast<double>(y) + half);
    if (r1 <= r0) continue;
    for (std::size_t x = 0; x < m.cols; ++x) {
      const double c0 = std::max(0.0, cell * static_cast<double>(x) - half);
      const double c1 = std::min(static_cast<double>(image_w), cell * static_cast<double>(x) + half);
      if (c1 <= c0) continue;
      for (const auto& b : boxes) {
        if (std::min(r1, b.bottom()) - std::max(r0, b.y) > 0 &&
            std::min(c1, b.right()) - std::max(c0, b.x) > 0) {
          m.set(y, x, true);
          break;
        }
      }
    }
  }
  return m;
}

/// Per-cell guidance probabilities (and the logits they came from).
struct GuidanceMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t cell_size = kDefaultCellSize;
  std::vector<double> logits;
  std::vector<double> probabilities;

  static GuidanceMap from_logits(std::size_t rows, std::size_t cols, std::vector<double> logits,
                                 std::size_t cell_size = kDefaultCellSize) {
    GuidanceMap m{rows, cols, cell_size, std::move(logits), {}};
    m.probabilities.resize(m.logits.size());
    for (std::size_t i = 0; i < m.logits.size(); ++i) m.probabilities[i] = sigmoid(m.logits[i]);
    return m;
  }
};

/// Three-level pyramid: level l average-pools l times (2x2, stride 2),
/// L2-normalizes, predicts one channel with a 1x1 conv and upsamples back.
template <typename T>
struct ContextModuleParams {
  std::array<ConvLayer<T>, 3> predictors;
  double epsilon = kDefaultL2Epsilon;

  static ContextModuleParams make(std::size_t in_channels) {
    ContextModuleParams p;
    for (auto& l : p.predictors) l = ConvLayer<T>::make(1, in_channels, 1, 1);
    return p;
  }
};

/// Toy feature stack (five 3x3 stride-2 conv+relu blocks, 1/32 resolution)
/// followed by the context module.
template <typename T>
struct GuidanceNetParams {
  static constexpr std::array<std::size_t, 6> kChannels{1, 8, 16, 16, 32, 32};

  std::array<ConvLayer<T>, 5> stack;
  ContextModuleParams<T> context;
  double tau = 0.2;

  static GuidanceNetParams init(std::uint64_t seed) {
    GuidanceNetParams p;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < 5; ++i) {
      p.stack[i] = ConvLayer<T>::make(kChannels[i + 1], kChannels[i], 3, 3, 2, 1);
      he_init(p.stack[i], rng);
    }
    p.context = ContextModuleParams<T>::make(kChannels[5]);
    for (auto& l : p.context.predictors) he_init(l, rng);
    return p;
  }

  std::vector<ConvLayer<T>*> layers() {
    std::vector<ConvLayer<T>*> v;
    for (auto& l : stack) v.push_back(&l);
    for (auto& l : context.predictors) v.push_back(&l);
    return v;
  }
  std::vector<const ConvLayer<T>*> layers() const {
    std::vector<const ConvLayer<T>*> v;
    for (const auto& l : stack) v.push_back(&l);
    for (const auto& l : context.predictors) v.push_back(&l);
    return v;
  }

  template <typename U>
  GuidanceNetParams<U> cast() const {
    GuidanceNetParams<U> p;
    for (std::size_t i = 0; i < 5; ++i) p.stack[i] = stack[i].template cast<U>();
    for (std::size_t i = 0; i < 3; ++i) p.context.predictors[i] = context.predictors[i].template cast<U>();
    p.context.epsilon = context.epsilon;
    p.tau = tau;
    return p;
  }
};

template <typename T>
struct ContextCache {
  std::array<Tensor<T>, 3> level_in;  // features, pooled once, pooled twice
  std::array<Tensor<T>, 3> normed;
  std::array<Tensor<T>, 3> predicted;  // before upsampling
  Tensor<T> logits;                    // 1 x 1 x Hm x Wm
};

template <typename T>
ContextCache<T> context_forward_cached(const Tensor<T>& features, const ContextModuleParams<T>& params) {
  ContextCache<T> c;
  c.level_in[0] = features;
  c.level_in[1] = avg_pool2d(features, 2, 2);
  c.level_in[2] = avg_pool2d(c.level_in[1], 2, 2);
  for (std::size_t l = 0; l < 3; ++l) {
    c.normed[l] = l2_normalize_channels(c.level_in[l], params.epsilon);
    c.predicted[l] = dense_conv2d(c.normed[l], params.predictors[l]);
    const Tensor<T> up = nearest_upsample(c.predicted[l], std::size_t{1} << l, features.h(), features.w());
    c.logits = l == 0 ? up : elementwise_add(c.logits, up);
  }
  return c;
}

/// Returns dL/dfeatures; accumulates predictor gradients into grads[0..2].
template <typename T>
Tensor<T> context_backward(const Tensor<T>& grad_logits, const ContextCache<T>& c,
                           const ContextModuleParams<T>& params, ConvGrads<T>* grads) {
  std::array<Tensor<T>, 3> g_in;
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor<T> g_pred = nearest_upsample_backward(grad_logits, c.predicted[l].shape(), std::size_t{1} << l);
    const Tensor<T> g_norm = dense_conv2d_backward(g_pred, c.normed[l], params.predictors[l], grads[l]);
    g_in[l] = l2_normalize_channels_backward(g_norm, c.level_in[l], c.normed[l], params.epsilon);
  }
  Tensor<T> g1 = elementwise_add(g_in[1], avg_pool2d_backward(g_in[2], c.level_in[1].shape(), 2, 2));
  return elementwise_add(g_in[0], avg_pool2d_backward(g1, c.level_in[0].shape(), 2, 2));
}

/// Sum of the three level predictions (logits), then sigmoid.
template <typename T>
GuidanceMap context_forward(const Tensor<T>& features, const ContextModuleParams<T>& params,
                            std::size_t cell_size = kDefaultCellSize) {
  if (features.n() != 1) throw DimensionError("context_forward expects a single feature map, got " + features.shape().str());
  const auto c = context_forward_cached(features, params);
  return GuidanceMap::from_logits(features.h(), features.w(),
                                  std::vector<double>(c.logits.values().begin(), c.logits.values().end()),
                                  cell_size);
}

template <typename T>
struct GuidanceCache {
  std::array<Tensor<T>, 6> acts;  // image, then each block's relu output
  ContextCache<T> context;
};

template <typename T>
GuidanceCache<T> guidance_forward_cached(const Tensor<T>& image, const GuidanceNetParams<T>& p) {
  GuidanceCache<T> c;
  c.acts[0] = image;
  for (std::size_t i = 0; i < 5; ++i) c.acts[i + 1] = relu(dense_conv2d(c.acts[i], p.stack[i]));
  c.context = context_forward_cached(c.acts[5], p.context);
  return c;
}

/// Full guidance network: image (1x1xHxW) to a ceil(H/32) x ceil(W/32) map.
template <typename T>
GuidanceMap guidance_forward(const Tensor<T>& image, const GuidanceNetParams<T>& p) {
  const auto c = guidance_forward_cached(image, p);
  return GuidanceMap::from_logits(c.context.logits.h(), c.context.logits.w(),
                                  std::vector<double>(c.context.logits.values().begin(), c.context.logits.values().end()));
}

/// Backward through the whole guidance net; returns gradients for layers()
/// order (five stack layers, then three predictors).
template <typename T>
NetGrads<T> guidance_backward(const Tensor<T>& grad_logits, const GuidanceCache<T>& c,
                              const GuidanceNetParams<T>& p) {
  NetGrads<T> g = zero_grads(p.layers());
  Tensor<T> grad = context_backward(grad_logits, c.context, p.context, g.data() + 5);
  for (std::size_t i = 5; i-- > 0;) {
    grad = relu_backward(grad, c.acts[i + 1]);
    grad = dense_conv2d_backward(grad, c.acts[i], p.stack[i], g[i], ConvBackwardOptions{i > 0});
  }
  return g;
}

struct LossAndGrad {
  double loss = 0;
  std::vector<double> grad;  // dL/dlogit per cell
};

/// Mean binary cross-entropy over cells; gradient (sigmoid(z) - y) / N.
inline LossAndGrad bce_loss_and_grad(std::span<const double> logits, const GuidanceMask& gt) {
  if (logits.size() != gt.cells.size())
    throw DimensionError("bce: " + std::to_string(logits.size()) + " logits vs " +
                         std::to_string(gt.cells.size()) + " mask cells");
  LossAndGrad r;
  r.grad.resize(logits.size());
  if (logits.empty()) return r;
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double y = gt.cells[i] ? 1.0 : 0.0;
    r.loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    r.grad[i] = (sigmoid(z) - y) * inv_n;
  }
  r.loss *= inv_n;
  return r;
}

/// Cell is true iff probability >= tau.
inline GuidanceMask binarize(const GuidanceMap& map, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValueError("tau must lie strictly inside (0, 1)");
  GuidanceMask m(map.rows, map.cols, false, map.cell_size);
  for (std::size_t i = 0; i < m.cells.size(); ++i) m.cells[i] = map.probabilities[i] >= tau ? 1 : 0;
  return m;
}

struct MaskCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  double recall() const { return tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double precision() const { return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  MaskCounts& operator+=(const MaskCounts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
};

inline MaskCounts mask_counts(const GuidanceMask& pred, const GuidanceMask& gt) {
  if (pred.rows != gt.rows || pred.cols != gt.cols)
    throw DimensionError("mask shapes differ: " + std::to_string(pred.rows) + "x" + std::to_string(pred.cols) +
                         " vs " + std::to_string(gt.rows) + "x" + std::to_string(gt.cols));
  MaskCounts c;
  for (std::size_t i = 0; i < pred.cells.size(); ++i) {
    const bool p = pred.cells[i], g = gt.cells[i];
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct MaskMetrics {
  double recall = 1.0;
  double precision = 1.0;
};

/// Cell-level recall and precision; 1.0 when the denominator is empty.
inline MaskMetrics mask_metrics(const GuidanceMask& pred, const GuidanceMask& gt) {
  const auto c = mask_counts(pred, gt);
  return {c.recall(), c.precision()};
}

struct SweepRow {
  double tau = 0;
  double recall = 0;
  double precision = 0;
  double area_ratio = 0;
};

/// Recall, precision and predicted area ratio per threshold, pooled over
/// every (map, ground truth) pair.
inline std::vector<SweepRow> pr_sweep(const std::vector<GuidanceMap>& maps, const std::vector<GuidanceMask>& gts,
                                      const std::vector<double>& taus) {
  if (maps.size() != gts.size()) throw DimensionError("pr_sweep: map and mask counts differ");
  std::vector<SweepRow> rows;
  for (double tau : taus) {
    MaskCounts total;
    std::size_t on = 0, cells = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const auto pred = binarize(maps[i], tau);
      total += mask_counts(pred, gts[i]);
      on += pred.count();
      cells += pred.size();
    }
    rows.push_back({tau, total.recall(), total.precision(),
                    cells ? static_cast<double>(on) / static_cast<double>(cells) : 0.0});
  }
  return rows;
}

inline std::vector<SweepRow> pr_sweep(const GuidanceMap& map, const GuidanceMask& gt, const std::vector<double>& taus) {
  return pr_sweep(std::vector<GuidanceMap>{map}, std::vector<GuidanceMask>{gt}, taus);
}

struct GuidanceTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  SgdConfig sgd{};
  double lr_decay_at = 2.0 / 3.0;
  std::uint64_t seed = 1;
  double tau = 0.2;
  double l2_epsilon = kDefaultL2Epsilon;
};

template <typename T>
struct GuidanceTrainResult {
  GuidanceNetParams<T> params;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double initial_loss = 0;
  double final_loss = 0;
};

template <typename T>
double guidance_dataset_loss(const Dataset& data, const GuidanceNetParams<T>& p) {
  std::vector<double> losses(data.size());
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(data.size()); ++i) {
    const auto& s = data[static_cast<std::size_t>(i)];
    const auto map = guidance_forward(image_to_tensor<T>(s.image), p);
    losses[static_cast<std::size_t>(i)] =
        bce_loss_and_grad(map.logits, gt_mask_from_boxes(s.image.width, s.image.height, s.boxes)).loss;
  }
  double sum = 0;
  for (double l : losses) sum += l;
  return data.empty() ? 0.0 : sum / static_cast<double>(data.size());
}

/// Minibatch SGD on mean cell BCE. Per-image gradients may be computed on
/// several threads; they are reduced in image order, so training is
/// deterministic for a given seed regardless of the thread count.
template <typename T>
GuidanceTrainResult<T> train_guidance(const Dataset& data, const GuidanceTrainConfig& cfg) {
  if (data.empty()) throw ValueError("train_guidance: empty dataset");
  GuidanceTrainResult<T> res;
  res.params = GuidanceNetParams<T>::init(cfg.seed);
  res.params.tau = cfg.tau;
  res.params.context.epsilon = cfg.l2_epsilon;
  auto layers = res.params.layers();
  SgdMomentum<T> opt(layers, cfg.sgd);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5348));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  const std::size_t steps_per_epoch = (data.size() + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  res.initial_loss = guidance_dataset_loss(data, res.params);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t b0 = 0; b0 < data.size(); b0 += batch, ++step) {
      const std::size_t bn = std::min(batch, data.size() - b0);
      std::vector<NetGrads<T>> parts(bn);
      std::vector<double> losses(bn);
#pragma omp parallel for schedule(static) num_threads(num_threads())
      for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(bn); ++j) {
        const auto& s = data[order[b0 + static_cast<std::size_t>(j)]];
        const auto cache = guidance_forward_cached(image_to_tensor<T>(s.image), res.params);
        const auto& logits = cache.context.logits;
        const auto lg = bce_loss_and_grad(std::vector<double>(logits.values().begin(), logits.values().end()),
                                          gt_mask_from_boxes(s.image.width, s.image.height, s.boxes));
        Tensor<T> grad(logits.shape());
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = static_cast<T>(lg.grad[k]);
        parts[static_cast<std::size_t>(j)] = guidance_backward(grad, cache, res.params);
        losses[static_cast<std::size_t>(j)] = lg.loss;
      }
      NetGrads<T> g = reduce_in_order(parts);
      scale_grads(g, T(1) / static_cast<T>(bn));
      for (double l : losses) epoch_loss += l;
      opt.step(g, step_lr(cfg.sgd.lr, step, total_steps, cfg.lr_decay_at));
    }
    res.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  res.final_loss = guidance_dataset_loss(data, res.params);
  return res;
}

/// Predicted guidance mask for an image at threshold tau.
template <typename T>
GuidanceMask predict_mask(const Image8& image, const GuidanceNetParams<T>& p, double tau) {
  return binarize(guidance_forward(image_to_tensor<T>(image), p), tau);
}

}  // namespace gcnn

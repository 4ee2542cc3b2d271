#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gcnn/boxes.hpp"
#include "gcnn/conv.hpp"
#include "gcnn/dataset.hpp"
#include "gcnn/guidance_net.hpp"
#include "gcnn/guided.hpp"
#include "gcnn/network.hpp"
#include "gcnn/rng.hpp"
#include "gcnn/synthesis.hpp"

namespace gcnn {

/// conv3x3 s1 c16, then four conv3x3 s2 blocks (16, 32, 32, 64), each with
/// relu, and a 1x1 head producing (score logit, dx, dy, log dw, log dh).
template <typename T>
struct ToyDetectorParams {
  static constexpr std::array<std::size_t, 6> kChannels{1, 16, 16, 32, 32, 64};
  static constexpr std::array<std::size_t, 5> kStrides{1, 2, 2, 2, 2};
  static constexpr std::size_t kHeadChannels = 5;
  static constexpr std::size_t kOutputStride = 16;

  std::array<ConvLayer<T>, 5> body;
  ConvLayer<T> head;

  static ToyDetectorParams init(std::uint64_t seed) {
    ToyDetectorParams p;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < 5; ++i) {
      p.body[i] = ConvLayer<T>::make(kChannels[i + 1], kChannels[i], 3, 3, kStrides[i], 1);
      he_init(p.body[i], rng);
    }
    p.head = ConvLayer<T>::make(kHeadChannels, kChannels[5], 1, 1);
    he_init(p.head, rng);
    // Start the score near the positive rate instead of 0.5.
    p.head.bias[0] = static_cast<T>(-2.0);
    return p;
  }

  std::vector<ConvLayer<T>*> layers() {
    std::vector<ConvLayer<T>*> v;
    for (auto& l : body) v.push_back(&l);
    v.push_back(&head);
    return v;
  }
  std::vector<const ConvLayer<T>*> layers() const {
    std::vector<const ConvLayer<T>*> v;
    for (const auto& l : body) v.push_back(&l);
    v.push_back(&head);
    return v;
  }

  template <typename U>
  ToyDetectorParams<U> cast() const {
    ToyDetectorParams<U> p;
    for (std::size_t i = 0; i < 5; ++i) p.body[i] = body[i].template cast<U>();
    p.head = head.template cast<U>();
    return p;
  }
};

/// Activations of one detector forward pass, kept for backward.
template <typename T>
struct DetectorRun {
  Mode mode = Mode::kDense;
  std::array<Tensor<T>, 6> inputs;  // input of each conv (5 body + head)
  std::array<Tensor<T>, 5> relu_out;
  Tensor<T> head;                   // 1 x 5 x h x w
  std::array<MaskView, 6> views;    // per-layer output views (guided modes)
  MaskView computed;                // head cells that were evaluated
  std::uint64_t macs = 0;
};

/// Runs the detector. Dense mode ignores `mask`. Guided mode projects the
/// mask to every layer's output resolution (optionally dilated by `dilate`
/// cells there) and computes only there; guided plus computes everywhere but
/// scales every layer input's background by `plus_p`.
template <typename T>
DetectorRun<T> detector_forward(const Tensor<T>& image, const ToyDetectorParams<T>& p, Mode mode,
                                const GuidanceMask* mask = nullptr, double plus_p = 1.0,
                                MaskAnchor anchor = MaskAnchor::kCentered, std::size_t dilate = 0) {
  if (image.n() != 1 || image.c() != 1)
    throw DimensionError("detector expects a 1x1xHxW grayscale image, got " + image.shape().str());
  if (image.h() % 32 != 0 || image.w() % 32 != 0)
    throw DimensionError("detector input " + image.shape().str() + " must have sides that are multiples of 32");
  if (mode != Mode::kDense && mask == nullptr) throw ValueError("guided modes need a guidance mask");
  DetectorRun<T> run;
  run.mode = mode;
  const auto all_layers = p.layers();
  Tensor<T> x = image;
  for (std::size_t i = 0; i < 6; ++i) {
    const ConvLayer<T>& layer = *all_layers[i];
    const Shape os = layer.output_shape(x.shape());
    if (mode != Mode::kDense)
      run.views[i] = mask_dilate(mask_project(*mask, os.h, os.w, image.h(), image.w(), anchor), dilate);
    if (mode == Mode::kGuidedPlus && i > 0) x = scale_background(x, run.views[i - 1], plus_p);
    run.inputs[i] = x;
    const bool guided = mode == Mode::kGuided;
    Tensor<T> y = guided ? guided_conv2d(x, layer, run.views[i]) : dense_conv2d(x, layer);
    run.macs += guided ? flop_count(layer, os, run.views[i]) : flop_count(layer, os);
    if (i < 5) {
      y = guided ? guided_pointwise(PointwiseOp::kRelu, y, run.views[i]) : relu(y);
      run.relu_out[i] = y;
    }
    x = std::move(y);
  }
  run.head = std::move(x);
  run.computed = mode == Mode::kGuided ? run.views[5] : MaskView(run.head.h(), run.head.w(), true);
  return run;
}

/// Backward through a dense or guided run; returns gradients in layers() order.
template <typename T>
NetGrads<T> detector_backward(const Tensor<T>& grad_head, const DetectorRun<T>& run, const ToyDetectorParams<T>& p) {
  if (run.mode == Mode::kGuidedPlus) throw ValueError("guided_plus is a test-time mode and has no backward pass");
  const bool guided = run.mode == Mode::kGuided;
  const auto all_layers = p.layers();
  NetGrads<T> g = zero_grads(all_layers);
  Tensor<T> grad = grad_head;
  for (std::size_t i = 6; i-- > 0;) {
    if (i < 5) grad = relu_backward(grad, run.relu_out[i]);
    const ConvBackwardOptions opts{i > 0};
    grad = guided ? guided_conv2d_backward(grad, run.inputs[i], *all_layers[i], run.views[i], g[i], opts)
                  : dense_conv2d_backward(grad, run.inputs[i], *all_layers[i], g[i], opts);
  }
  return g;
}

/// Per-cell training targets at the detector's output stride.
struct CellTargets {
  std::size_t rows = 0, cols = 0;
  std::size_t stride = 16;
  std::vector<std::uint8_t> label;
  std::vector<std::array<double, 4>> reg;  // dx, dy, log dw, log dh; valid where label == 1
  std::vector<int> box_index;               // -1 when negative

  std::size_t positives() const { return static_cast<std::size_t>(std::count(label.begin(), label.end(), 1)); }
};

/// A cell is positive iff its centre (stride*y + stride/2, stride*x + stride/2)
/// lies strictly inside a box. Overlapping candidates resolve to the box with
/// the highest IoU with the cell footprint, first-listed on ties.
inline CellTargets make_targets(std::size_t image_w, std::size_t image_h, const std::vector<BBox>& boxes,
                                std::size_t stride = 16) {
  CellTargets t;
  t.stride = stride;
  t.rows = (image_h + stride - 1) / stride;
  t.cols = (image_w + stride - 1) / stride;
  t.label.assign(t.rows * t.cols, 0);
  t.reg.assign(t.rows * t.cols, {0, 0, 0, 0});
  t.box_index.assign(t.rows * t.cols, -1);
  const double s = static_cast<double>(stride);
  for (std::size_t y = 0; y < t.rows; ++y)
    for (std::size_t x = 0; x < t.cols; ++x) {
      const double cy = s * static_cast<double>(y) + s / 2, cx = s * static_cast<double>(x) + s / 2;
      const BBox cell{s * static_cast<double>(x), s * static_cast<double>(y), s, s};
      int best = -1;
      double best_iou = -1;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const auto& bx = boxes[b];
        if (!(cx > bx.x && cx < bx.right() && cy > bx.y && cy < bx.bottom())) continue;
        const double v = iou(cell, bx);
        if (v > best_iou) best_iou = v, best = static_cast<int>(b);
      }
      if (best < 0) continue;
      const auto& bx = boxes[static_cast<std::size_t>(best)];
      const std::size_t i = y * t.cols + x;
      t.label[i] = 1;
      t.box_index[i] = best;
      t.reg[i] = {(bx.x + bx.w / 2 - cx) / s, (bx.y + bx.h / 2 - cy) / s, std::log(bx.w / s), std::log(bx.h / s)};
    }
  return t;
}

struct DetectorLossConfig {
  double lambda = 1.0;
};

template <typename T>
struct DetectorLoss {
  double loss = 0;
  double score_loss = 0;
  double box_loss = 0;
  Tensor<T> grad;  // dL/dhead
};

/// Mean BCE of the score over the cells in `view` (all cells when null) plus
/// lambda times the mean smooth-L1 box loss over positive cells in the view.
template <typename T>
DetectorLoss<T> detector_loss(const Tensor<T>& head, const CellTargets& targets, const MaskView* view,
                              const DetectorLossConfig& cfg = {}) {
  if (head.c() != 5 || head.h() != targets.rows || head.w() != targets.cols)
    throw DimensionError("head " + head.shape().str() + " does not match targets " + std::to_string(targets.rows) +
                         "x" + std::to_string(targets.cols));
  if (view && (view->h != head.h() || view->w != head.w())) throw DimensionError("loss view does not match head");
  DetectorLoss<T> r;
  r.grad = Tensor<T>(head.shape());
  const std::size_t P = head.h() * head.w();
  std::size_t n = 0, npos = 0;
  for (std::size_t i = 0; i < P; ++i)
    if (!view || view->cells[i]) {
      ++n;
      if (targets.label[i]) ++npos;
    }
  if (n == 0) return r;
  const T* score = head.plane(0, 0);
  for (std::size_t i = 0; i < P; ++i) {
    if (view && !view->cells[i]) continue;
    const double z = score[i];
    const double y = targets.label[i] ? 1.0 : 0.0;
    r.score_loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    r.grad.plane(0, 0)[i] = static_cast<T>((sigmoid(z) - y) / static_cast<double>(n));
    if (!targets.label[i]) continue;
    for (std::size_t k = 0; k < 4; ++k) {
      const double d = static_cast<double>(head.plane(0, k + 1)[i]) - targets.reg[i][k];
      const double ad = std::abs(d);
      r.box_loss += ad < 1.0 ? 0.5 * d * d : ad - 0.5;
      const double gd = ad < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
      r.grad.plane(0, k + 1)[i] = static_cast<T>(cfg.lambda * gd / static_cast<double>(npos));
    }
  }
  r.score_loss /= static_cast<double>(n);
  if (npos) r.box_loss /= static_cast<double>(npos);
  r.loss = r.score_loss + cfg.lambda * r.box_loss;
  return r;
}

struct Detection {
  BBox box;
  double score = 0;
};

struct DecodeConfig {
  double score_thresh = 0.5;
  double nms_iou = 0.5;
};

/// Greedy NMS over candidates already sorted by descending score.
inline std::vector<Detection> nms(const std::vector<Detection>& sorted, double iou_thresh) {
  std::vector<Detection> kept;
  for (const auto& d : sorted) {
    bool keep = true;
    for (const auto& k : kept)
      if (iou(d.box, k.box) >= iou_thresh) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(d);
  }
  return kept;
}

/// Cells (restricted to `view` when given) with sigmoid(score) >= thresh emit
/// a box; candidates sorted by descending score, ties in row-major order,
/// then greedy NMS.
template <typename T>
std::vector<Detection> decode_and_nms(const Tensor<T>& head, const MaskView* view, const DecodeConfig& cfg,
                                      std::size_t stride = 16) {
  if (!(cfg.score_thresh > 0 && cfg.score_thresh < 1) || !(cfg.nms_iou > 0 && cfg.nms_iou < 1))
    throw ValueError("decode thresholds must lie in (0, 1)");
  std::vector<Detection> cand;
  if (head.empty()) return cand;
  if (head.c() != 5) throw DimensionError("head must have 5 channels, got " + head.shape().str());
  const double s = static_cast<double>(stride);
  for (std::size_t y = 0; y < head.h(); ++y)
    for (std::size_t x = 0; x < head.w(); ++x) {
      const std::size_t i = y * head.w() + x;
      if (view && !view->cells[i]) continue;
      const double score = sigmoid(static_cast<double>(head.plane(0, 0)[i]));
      if (score < cfg.score_thresh) continue;
      const double cx = s * static_cast<double>(x) + s / 2 + static_cast<double>(head.plane(0, 1)[i]) * s;
      const double cy = s * static_cast<double>(y) + s / 2 + static_cast<double>(head.plane(0, 2)[i]) * s;
      const double w = s * std::exp(std::clamp(static_cast<double>(head.plane(0, 3)[i]), -8.0, 8.0));
      const double h = s * std::exp(std::clamp(static_cast<double>(head.plane(0, 4)[i]), -8.0, 8.0));
      cand.push_back({BBox{cx - w / 2, cy - h / 2, w, h}, score});
    }
  std::stable_sort(cand.begin(), cand.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return nms(cand, cfg.nms_iou);
}

/// Matching counts for one image or pooled over many.
struct EvalCounts {
  std::size_t matched = 0;
  std::size_t detections = 0;
  std::size_t ground_truth = 0;

  double recall() const { return ground_truth == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(ground_truth); }
  double precision() const { return detections == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(detections); }
  double f_measure() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  EvalCounts& operator+=(const EvalCounts& o) {
    matched += o.matched, detections += o.detections, ground_truth += o.ground_truth;
    return *this;
  }
};

/// One-to-one greedy matching: detections in descending score order each take
/// the unmatched ground-truth box of highest IoU (first on ties) if it
/// reaches `iou_thresh`.
inline EvalCounts evaluate(const std::vector<Detection>& dets, const std::vector<BBox>& gt, double iou_thresh = 0.5) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> used(gt.size(), false);
  EvalCounts c{0, dets.size(), gt.size()};
  for (std::size_t di : order) {
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g]) continue;
      const double v = iou(dets[di].box, gt[g]);
      if (v >= best_iou && (best < 0 || v > best_iou)) best_iou = v, best = static_cast<int>(g);
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      ++c.matched;
    }
  }
  return c;
}

enum class TrainStrategy { kDense, kPredicted, kPredictedSynthesis, kGroundTruthSynthesis };

inline TrainStrategy parse_strategy(const std::string& s) {
  if (s == "dense") return TrainStrategy::kDense;
  if (s == "predicted") return TrainStrategy::kPredicted;
  if (s == "predicted_synthesis") return TrainStrategy::kPredictedSynthesis;
  if (s == "gt_synthesis") return TrainStrategy::kGroundTruthSynthesis;
  throw ValueError("invalid strategy '" + s + "' (expected dense, predicted, predicted_synthesis or gt_synthesis)");
}

inline std::string to_string(TrainStrategy s) {
  switch (s) {
    case TrainStrategy::kDense: return "dense";
    case TrainStrategy::kPredicted: return "predicted";
    case TrainStrategy::kPredictedSynthesis: return "predicted_synthesis";
    case TrainStrategy::kGroundTruthSynthesis: return "gt_synthesis";
  }
  return "?";
}

struct DetectorTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  SgdConfig sgd{};
  double lr_decay_at = 2.0 / 3.0;
  std::uint64_t seed = 1;
  TrainStrategy strategy = TrainStrategy::kGroundTruthSynthesis;
  SynthesisConfig synthesis{};
  DetectorLossConfig loss{};
  double tau = 0.2;  // binarization threshold for predicted-mask strategies
};

template <typename T>
struct DetectorTrainResult {
  ToyDetectorParams<T> params;
  std::vector<double> epoch_loss;
};

/// Mask used for one training image in one epoch (nullopt in dense mode).
inline std::optional<GuidanceMask> training_mask(const DetectorTrainConfig& cfg, const GuidanceMask& base,
                                                 std::size_t epoch, std::size_t image_index) {
  switch (cfg.strategy) {
    case TrainStrategy::kDense: return std::nullopt;
    case TrainStrategy::kPredicted: return base;
    case TrainStrategy::kPredictedSynthesis:
    case TrainStrategy::kGroundTruthSynthesis: {
      SynthesisConfig syn = cfg.synthesis;
      syn.seed = derive_seed(cfg.synthesis.seed, epoch, image_index);
      return extend_mask_random(base, syn);
    }
  }
  return std::nullopt;
}

/// Trains the toy detector. Each step builds every image's mask (ground
/// truth or predicted, extended by synthesis for the *_synthesis
/// strategies, freshly drawn per epoch), runs the guided forward/backward
/// pass and applies SGD with momentum on the batch-mean gradient.
template <typename T>
DetectorTrainResult<T> train_detector(const Dataset& data, const DetectorTrainConfig& cfg,
                                      const GuidanceNetParams<float>* guidance = nullptr) {
  if (data.empty()) throw ValueError("train_detector: empty dataset");
  const bool predicted = cfg.strategy == TrainStrategy::kPredicted || cfg.strategy == TrainStrategy::kPredictedSynthesis;
  if (predicted && guidance == nullptr) throw ValueError("strategy " + to_string(cfg.strategy) + " needs a guidance network");
  cfg.synthesis.validate();

  std::vector<Tensor<T>> images(data.size());
  std::vector<CellTargets> targets(data.size());
  std::vector<GuidanceMask> base(data.size());
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(data.size()); ++i) {
    const auto& s = data[static_cast<std::size_t>(i)];
    images[static_cast<std::size_t>(i)] = image_to_tensor<T>(s.image);
    targets[static_cast<std::size_t>(i)] = make_targets(s.image.width, s.image.height, s.boxes);
    base[static_cast<std::size_t>(i)] = predicted ? predict_mask(s.image, *guidance, cfg.tau)
                                                  : gt_mask_from_boxes(s.image.width, s.image.height, s.boxes);
  }

  DetectorTrainResult<T> res;
  res.params = ToyDetectorParams<T>::init(cfg.seed);
  SgdMomentum<T> opt(res.params.layers(), cfg.sgd);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5348));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  const std::size_t total_steps = (data.size() + batch - 1) / batch * cfg.epochs;
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
        const std::size_t idx = order[b0 + static_cast<std::size_t>(j)];
        const auto mask = training_mask(cfg, base[idx], epoch, idx);
        const Mode mode = mask ? Mode::kGuided : Mode::kDense;
        const auto run = detector_forward(images[idx], res.params, mode, mask ? &*mask : nullptr);
        const auto l = detector_loss(run.head, targets[idx], mask ? &run.views[5] : nullptr, cfg.loss);
        parts[static_cast<std::size_t>(j)] = detector_backward(l.grad, run, res.params);
        losses[static_cast<std::size_t>(j)] = l.loss;
      }
      NetGrads<T> g = reduce_in_order(parts);
      scale_grads(g, T(1) / static_cast<T>(bn));
      for (double l : losses) epoch_loss += l;
      opt.step(g, step_lr(cfg.sgd.lr, step, total_steps, cfg.lr_decay_at));
    }
    res.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  return res;
}

}  // namespace gcnn

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gcnn/detector.hpp"
#include "gcnn/scene.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace gcnn;

namespace {

Tensor<float> random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<float> t(1, 1, h, w);
  oracle::fill_uniform(t, rng, 0, 1);
  return t;
}

GuidanceMask random_mask(std::size_t rows, std::size_t cols, double ratio, std::mt19937_64& rng) {
  GuidanceMask m(rows, cols);
  std::bernoulli_distribution d(ratio);
  for (auto& c : m.cells) c = d(rng);
  return m;
}

// Greedy NMS restated as "repeatedly take the best remaining candidate and
// drop everything it suppresses".
std::vector<Detection> brute_nms(std::vector<Detection> c, double t) {
  std::vector<Detection> kept;
  while (!c.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < c.size(); ++i)
      if (c[i].score > c[best].score) best = i;
    const Detection d = c[best];
    kept.push_back(d);
    std::vector<Detection> rest;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (i != best && oracle::box_iou(c[i].box, d.box) < t) rest.push_back(c[i]);
    c = std::move(rest);
  }
  return kept;
}

// Matching via the full IoU matrix, scanning detections by score.
EvalCounts brute_eval(const std::vector<Detection>& dets, const std::vector<BBox>& gt, double t) {
  std::vector<std::vector<double>> m(dets.size(), std::vector<double>(gt.size()));
  for (std::size_t i = 0; i < dets.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j) m[i][j] = oracle::box_iou(dets[i].box, gt[j]);
  std::vector<bool> det_done(dets.size()), gt_used(gt.size());
  EvalCounts c{0, dets.size(), gt.size()};
  for (std::size_t round = 0; round < dets.size(); ++round) {
    std::size_t di = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (!det_done[i] && (di == dets.size() || dets[i].score > dets[di].score)) di = i;
    det_done[di] = true;
    std::size_t best = gt.size();
    for (std::size_t j = 0; j < gt.size(); ++j)
      if (!gt_used[j] && m[di][j] >= t && (best == gt.size() || m[di][j] > m[di][best])) best = j;
    if (best < gt.size()) gt_used[best] = true, ++c.matched;
  }
  return c;
}

std::vector<Detection> random_dets(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0, 100), ext(5, 40);
  std::uniform_int_distribution<int> score(1, 20);  // coarse, so ties occur
  std::vector<Detection> d;
  for (std::size_t i = 0; i < n; ++i) d.push_back({BBox{pos(rng), pos(rng), ext(rng), ext(rng)}, score(rng) / 21.0});
  return d;
}

}  // namespace

TEST(DetectorForwardTest, ShapesAndErrors) {
  const auto p = ToyDetectorParams<float>::init(1);
  const auto run = detector_forward(random_image(64, 96, 1), p, Mode::kDense);
  EXPECT_EQ(run.head.shape(), (Shape{1, 5, 4, 6}));
  EXPECT_THROW(detector_forward(random_image(60, 64, 1), p, Mode::kDense), DimensionError);
  EXPECT_THROW(detector_forward(random_image(64, 64, 1), p, Mode::kGuided), ValueError);
}

TEST(DetectorForwardTest, AllTrueMaskIsDense) {
  const auto p = ToyDetectorParams<float>::init(2);
  const auto img = random_image(96, 64, 2);
  const GuidanceMask full(3, 2, true);
  const auto d = detector_forward(img, p, Mode::kDense);
  for (Mode m : {Mode::kGuided, Mode::kGuidedPlus}) {
    const auto g = detector_forward(img, p, m, &full, 0.3);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(g.relu_out[i], d.relu_out[i]) << i;
    EXPECT_EQ(g.head, d.head);
    EXPECT_EQ(g.macs, d.macs);
  }
}

TEST(DetectorForwardTest, AllFalseMaskGivesNoDetections) {
  const auto p = ToyDetectorParams<float>::init(3);
  const GuidanceMask empty(2, 2);
  const auto run = detector_forward(random_image(64, 64, 3), p, Mode::kGuided, &empty);
  for (float v : run.head.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(run.macs, 0u);
  DecodeConfig cfg;
  cfg.score_thresh = 0.01;
  EXPECT_TRUE(decode_and_nms(run.head, &run.computed, cfg).empty());
}

TEST(DetectorForwardTest, RandomMaskBackgroundZeroInteriorDense) {
  std::mt19937_64 rng(4);
  const auto p = ToyDetectorParams<float>::init(4);
  const auto img = random_image(128, 192, 4);
  const auto dense = detector_forward(img, p, Mode::kDense);
  for (int t = 0; t < 5; ++t) {
    const auto mask = random_mask(4, 6, 0.5, rng);
    const auto g = detector_forward(img, p, Mode::kGuided, &mask);
    const auto& view = g.views[5];
    EXPECT_EQ(view, mask_project(mask, 8, 12, 128, 192, MaskAnchor::kCentered));
    EXPECT_EQ(g.computed, view);
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t i = 0; i < view.size(); ++i)
        if (!view.cells[i]) ASSERT_EQ(g.head.plane(0, c)[i], 0.0f);
  }
  // Only the last mask column is false: cells whose 33 px receptive field
  // stays clear of it match the dense network.
  GuidanceMask mask(4, 6, true);
  for (std::size_t y = 0; y < 4; ++y) mask.set(y, 5, false);
  const auto g = detector_forward(img, p, Mode::kGuided, &mask);
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        const float a = g.head.at(0, c, y, x), b = dense.head.at(0, c, y, x);
        EXPECT_LE(std::abs(a - b), 1e-4 * std::max(1.0f, std::abs(b))) << c << " " << y << " " << x;
      }
}

TEST(DetectorForwardTest, GuidedPlusDegenerateScales) {
  std::mt19937_64 rng(5);
  const auto p = ToyDetectorParams<float>::init(5);
  const auto img = random_image(128, 128, 5);
  const auto mask = random_mask(4, 4, 0.4, rng);
  const auto guided = detector_forward(img, p, Mode::kGuided, &mask);
  const auto plus0 = detector_forward(img, p, Mode::kGuidedPlus, &mask, 0.0);
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < guided.computed.size(); ++i)
      if (guided.computed.cells[i]) ASSERT_EQ(plus0.head.plane(0, c)[i], guided.head.plane(0, c)[i]);
  EXPECT_EQ(detector_forward(img, p, Mode::kGuidedPlus, &mask, 1.0).head, detector_forward(img, p, Mode::kDense).head);
}

TEST(DetectorForwardTest, MacsFollowViews) {
  std::mt19937_64 rng(6);
  const auto p = ToyDetectorParams<float>::init(6);
  const auto img = random_image(128, 160, 6);
  const auto mask = random_mask(4, 5, 0.3, rng);
  const auto dense = detector_forward(img, p, Mode::kDense);
  const auto g = detector_forward(img, p, Mode::kGuided, &mask);
  const auto layers = p.layers();
  std::uint64_t expect = 0, dense_expect = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    const Shape os = layers[i]->output_shape(dense.inputs[i].shape());
    const double ratio = static_cast<double>(g.views[i].count()) / static_cast<double>(g.views[i].size());
    const auto full = flop_count(*layers[i], os);
    expect += static_cast<std::uint64_t>(std::llround(ratio * static_cast<double>(full)));
    dense_expect += full;
  }
  EXPECT_EQ(g.macs, expect);
  EXPECT_EQ(dense.macs, dense_expect);
  EXPECT_EQ(detector_forward(img, p, Mode::kGuidedPlus, &mask, 0.5).macs, dense.macs);
}

TEST(TargetsTest, Rules) {
  EXPECT_EQ(make_targets(64, 64, {}).positives(), 0u);
  const auto t = make_targets(64, 64, {BBox{0, 0, 64, 64}});
  EXPECT_EQ(t.positives(), 16u);
  // Centre of cell (1,1) is (24, 24); box centre is (32, 32).
  EXPECT_DOUBLE_EQ(t.reg[5][0], 0.5);
  EXPECT_DOUBLE_EQ(t.reg[5][1], 0.5);
  EXPECT_DOUBLE_EQ(t.reg[5][2], std::log(4.0));
  // Centre exactly on a box edge is not strictly inside.
  EXPECT_EQ(make_targets(64, 64, {BBox{8, 8, 20, 20}}).label[0], 0);
  EXPECT_EQ(make_targets(64, 64, {BBox{7.5, 7.5, 20, 20}}).label[0], 1);
  // Overlap: highest IoU with the 16x16 cell wins, first-listed on ties.
  const std::vector<BBox> boxes{BBox{0, 0, 40, 40}, BBox{2, 2, 14, 14}, BBox{2, 2, 14, 14}};
  EXPECT_EQ(make_targets(64, 64, boxes).box_index[0], 1);
  const std::vector<BBox> tie{BBox{0, 0, 20, 20}, BBox{-4, -4, 20, 20}};
  EXPECT_DOUBLE_EQ(iou(BBox{0, 0, 16, 16}, tie[0]), iou(BBox{0, 0, 16, 16}, tie[1]));
  EXPECT_EQ(make_targets(64, 64, tie).box_index[0], 0);
}

TEST(DetectorLossTest, PerfectAndEmpty) {
  const auto t = make_targets(64, 64, {BBox{10, 12, 30, 20}});
  Tensor<double> head(1, 5, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) {
    head.plane(0, 0)[i] = t.label[i] ? 30 : -30;
    for (std::size_t k = 0; k < 4; ++k) head.plane(0, k + 1)[i] = t.reg[i][k];
  }
  EXPECT_LT(detector_loss(head, t, nullptr).loss, 1e-3);
  const MaskView none(4, 4);
  const auto l = detector_loss(head, t, &none);
  EXPECT_EQ(l.loss, 0.0);
  for (double v : l.grad.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(detector_loss(head, make_targets(64, 80, {}), nullptr), DimensionError);
}

TEST(DetectorLossTest, AllFalseViewGivesZeroNetworkGradients) {
  const auto p = ToyDetectorParams<double>::init(7);
  Tensor<double> img(1, 1, 64, 64, 0.3);
  const GuidanceMask empty(2, 2);
  const auto run = detector_forward(img, p, Mode::kGuided, &empty);
  const auto l = detector_loss(run.head, make_targets(64, 64, {BBox{5, 5, 30, 30}}), &run.views[5]);
  EXPECT_EQ(l.loss, 0.0);
  for (const auto& g : detector_backward(l.grad, run, p)) {
    for (double v : g.weights.values()) ASSERT_EQ(v, 0.0);
    for (double v : g.bias) ASSERT_EQ(v, 0.0);
  }
}

namespace {

void expect_gradients_match(Mode mode, std::uint64_t seed) {
  const auto r = gradcheck::detector(mode, seed);
  for (std::size_t i = 0; i < r.layers.size(); ++i)
    EXPECT_LT(r.layers[i].rel_error, 1e-5) << to_string(mode) << " layer " << i << " kinks " << r.layers[i].kinks;
  EXPECT_LE(r.kinks() * 20, r.checked());
}

}  // namespace

TEST(DetectorGradientTest, Dense) { expect_gradients_match(Mode::kDense, 11); }
TEST(DetectorGradientTest, Guided) { expect_gradients_match(Mode::kGuided, 12); }

TEST(DetectorGradientTest, GuidedPlusHasNoBackward) {
  const auto p = ToyDetectorParams<double>::init(1);
  const GuidanceMask m(2, 2, true);
  const auto run = detector_forward(Tensor<double>(1, 1, 64, 64, 0.5), p, Mode::kGuidedPlus, &m, 0.5);
  EXPECT_THROW(detector_backward(run.head, run, p), ValueError);
}

TEST(DecodeTest, EmptyAndDuplicates) {
  EXPECT_TRUE(decode_and_nms(Tensor<float>(), nullptr, DecodeConfig{}).empty());
  EXPECT_TRUE(decode_and_nms(Tensor<float>(1, 5, 3, 3, -5.0f), nullptr, DecodeConfig{}).empty());
  const std::vector<Detection> two{{BBox{0, 0, 10, 10}, 0.9}, {BBox{0, 0, 10, 10}, 0.8}};
  const auto kept = nms(two, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.9);
  EXPECT_THROW(decode_and_nms(Tensor<float>(1, 5, 1, 1), nullptr, DecodeConfig{0.0, 0.5}), ValueError);
}

TEST(DecodeTest, BoxGeometry) {
  Tensor<float> head(1, 5, 2, 2, 0.0f);
  head.at(0, 0, 1, 0) = 3.0f;
  head.at(0, 1, 1, 0) = 0.25f;
  head.at(0, 3, 1, 0) = std::log(2.0f);
  head.at(0, 0, 0, 0) = -3.0f;
  head.at(0, 0, 0, 1) = -3.0f;
  head.at(0, 0, 1, 1) = -3.0f;
  const auto d = decode_and_nms(head, nullptr, DecodeConfig{});
  ASSERT_EQ(d.size(), 1u);
  EXPECT_NEAR(d[0].box.x, 8 + 4 - 16, 1e-5);
  EXPECT_NEAR(d[0].box.y, 16, 1e-5);
  EXPECT_NEAR(d[0].box.w, 32, 1e-4);
  EXPECT_NEAR(d[0].box.h, 16, 1e-5);
  EXPECT_NEAR(d[0].score, 1 / (1 + std::exp(-3.0)), 1e-6);
}

TEST(DecodeTest, MatchesBruteForce) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 500; ++t) {
    Tensor<float> head(1, 5, 1 + rng() % 6, 1 + rng() % 6);
    oracle::fill_uniform(head, rng, -1.5, 1.5);
    const double thr = 0.3 + 0.4 * std::uniform_real_distribution<double>()(rng);
    const double it = 0.2 + 0.6 * std::uniform_real_distribution<double>()(rng);
    std::vector<Detection> cand;
    for (std::size_t y = 0; y < head.h(); ++y)
      for (std::size_t x = 0; x < head.w(); ++x) {
        const double s = 1 / (1 + std::exp(-double(head.at(0, 0, y, x))));
        if (s < thr) continue;
        const double cx = 16.0 * x + 8 + 16.0 * head.at(0, 1, y, x), cy = 16.0 * y + 8 + 16.0 * head.at(0, 2, y, x);
        const double w = 16 * std::exp(double(head.at(0, 3, y, x))), h = 16 * std::exp(double(head.at(0, 4, y, x)));
        cand.push_back({BBox{cx - w / 2, cy - h / 2, w, h}, s});
      }
    const auto got = decode_and_nms(head, nullptr, DecodeConfig{thr, it});
    const auto want = brute_nms(cand, it);
    ASSERT_EQ(got.size(), want.size()) << t;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i].score, want[i].score, 1e-12);
      EXPECT_NEAR(got[i].box.x, want[i].box.x, 1e-9);
      EXPECT_NEAR(got[i].box.w, want[i].box.w, 1e-9);
    }
    for (std::size_t i = 1; i < got.size(); ++i) EXPECT_GE(got[i - 1].score, got[i].score);
  }
}

TEST(EvaluateTest, Conventions) {
  const std::vector<BBox> gt{BBox{0, 0, 10, 10}, BBox{20, 20, 10, 10}};
  std::vector<Detection> same;
  for (const auto& b : gt) same.push_back({b, 0.9});
  auto c = evaluate(same, gt);
  EXPECT_EQ(c.recall(), 1.0);
  EXPECT_EQ(c.precision(), 1.0);
  EXPECT_EQ(c.f_measure(), 1.0);
  c = evaluate({}, gt);
  EXPECT_EQ(c.recall(), 0.0);
  EXPECT_EQ(c.precision(), 1.0);
  EXPECT_EQ(c.f_measure(), 0.0);
  // One detection cannot claim two ground-truth boxes.
  c = evaluate({{BBox{0, 0, 10, 10}, 0.9}, {BBox{1, 0, 10, 10}, 0.8}}, {BBox{0, 0, 10, 10}});
  EXPECT_EQ(c.matched, 1u);
  EXPECT_EQ(c.precision(), 0.5);
}

TEST(EvaluateTest, MatchesBruteForce) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 500; ++t) {
    const auto dets = random_dets(rng() % 12, rng);
    std::vector<BBox> gt;
    for (const auto& d : random_dets(rng() % 10, rng)) gt.push_back(d.box);
    // Sprinkle near-copies so matches actually happen.
    for (std::size_t i = 0; i < dets.size() && i < 4; ++i) gt.push_back(BBox{dets[i].box.x + 2, dets[i].box.y, dets[i].box.w, dets[i].box.h});
    const auto a = evaluate(dets, gt, 0.5), b = brute_eval(dets, gt, 0.5);
    ASSERT_EQ(a.matched, b.matched) << t;
    EXPECT_EQ(a.detections, b.detections);
    EXPECT_EQ(a.ground_truth, b.ground_truth);
  }
}

TEST(StrategyTest, Parse) {
  for (auto s : {TrainStrategy::kDense, TrainStrategy::kPredicted, TrainStrategy::kPredictedSynthesis,
                 TrainStrategy::kGroundTruthSynthesis})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("gt"), ValueError);
}

namespace {

Dataset small_data(std::size_t n, std::uint64_t seed, std::size_t side = 128) {
  SceneSpec spec;
  spec.width = spec.height = side;
  return make_dataset(n, spec, seed);
}

bool same_params(const ToyDetectorParams<float>& a, const ToyDetectorParams<float>& b) {
  for (std::size_t i = 0; i < 6; ++i)
    if (!(a.layers()[i]->weights == b.layers()[i]->weights) || a.layers()[i]->bias != b.layers()[i]->bias) return false;
  return true;
}

}  // namespace

TEST(DetectorTrainTest, DenseOverfitsOneImage) {
  SceneSpec spec;
  spec.width = spec.height = 128;
  spec.bucket = 1;
  spec.seed = 21;
  const auto sc = gen_scene(spec);
  const Dataset data{{"one", sc.image, sc.boxes}};
  DetectorTrainConfig cfg;
  cfg.strategy = TrainStrategy::kDense;
  cfg.epochs = 600;
  cfg.batch_size = 1;
  const auto res = train_detector<float>(data, cfg);
  const auto run = detector_forward(image_to_tensor<float>(sc.image), res.params, Mode::kDense);
  const auto dets = decode_and_nms(run.head, nullptr, DecodeConfig{});
  const auto c = evaluate(dets, sc.boxes);
  EXPECT_EQ(c.f_measure(), 1.0) << "matched " << c.matched << " of " << c.ground_truth << ", " << c.detections
                                << " detections; final loss " << res.epoch_loss.back();
}

TEST(DetectorTrainTest, DeterministicAcrossThreadCounts) {
  const auto data = small_data(10, 4);
  DetectorTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  DetectorTrainResult<float> a, b;
  {
    ScopedThreads t(1);
    a = train_detector<float>(data, cfg);
  }
  {
    ScopedThreads t(4);
    b = train_detector<float>(data, cfg);
  }
  EXPECT_TRUE(same_params(a.params, b.params));
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

TEST(DetectorTrainTest, SynthesisWithPOneIsDenseTraining) {
  const auto data = small_data(6, 5);
  DetectorTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.synthesis.p = 1.0;
  const auto guided = train_detector<float>(data, cfg);
  cfg.strategy = TrainStrategy::kDense;
  const auto dense = train_detector<float>(data, cfg);
  EXPECT_TRUE(same_params(guided.params, dense.params));
}

TEST(DetectorTrainTest, GuidedSynthesisLossDecreases) {
  const auto data = small_data(24, 6);
  DetectorTrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 8;
  cfg.synthesis = {0.4, 77};
  // 24 steps is too short for a decay: momentum overshoots right after it.
  cfg.lr_decay_at = 1.0;
  const auto res = train_detector<float>(data, cfg);
  for (std::size_t e = 1; e < res.epoch_loss.size(); ++e) EXPECT_LT(res.epoch_loss[e], res.epoch_loss[e - 1]) << e;
}

TEST(DetectorTrainTest, Errors) {
  DetectorTrainConfig cfg;
  EXPECT_THROW(train_detector<float>(Dataset{}, cfg), ValueError);
  cfg.strategy = TrainStrategy::kPredicted;
  EXPECT_THROW(train_detector<float>(small_data(1, 1), cfg), ValueError);
}

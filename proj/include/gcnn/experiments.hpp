#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gcnn/csv.hpp"
#include "gcnn/dataset.hpp"
#include "gcnn/detector.hpp"
#include "gcnn/guidance_net.hpp"
#include "gcnn/pipeline.hpp"

namespace gcnn {

/// One trained-and-evaluated strategy of the ablation.
struct AblationRow {
  std::string name;
  TrainStrategy train = TrainStrategy::kDense;
  Mode test = Mode::kDense;
  double synthesis_p = 0;  // 0 for strategies without synthesis
  EvalSummary eval;

  double mac_reduction() const { return eval.macs ? static_cast<double>(eval.dense_macs) / static_cast<double>(eval.macs) : 0.0; }
};

struct AblationSettings {
  DetectorTrainConfig train{};  // strategy and synthesis.p are overridden per row
  InferenceConfig inference{};  // mode and plus_p are overridden per row
  double guided_p = 0.4;        // synthesis rate of the guided row
  double plus_p = 0.8;          // synthesis rate and test scale of the guided-plus row
};

/// Trains and evaluates the five strategies on the same splits:
///   dense                   dense training, dense test
///   predicted_no_retrain    the dense model tested with the predicted mask
///   predicted_retrain       trained on predicted masks, tested guided
///   gt_synthesis_guided     ground truth + synthesis at guided_p, tested guided
///   gt_synthesis_plus       ground truth + synthesis at plus_p, tested guided plus
inline std::vector<AblationRow> run_ablation(const Dataset& train, const Dataset& val,
                                             const GuidanceNetParams<float>& guidance, const AblationSettings& s) {
  auto fit = [&](TrainStrategy strategy, double p) {
    DetectorTrainConfig c = s.train;
    c.strategy = strategy;
    c.synthesis.p = p;
    c.tau = s.inference.tau;
    return train_detector<float>(train, c, &guidance).params;
  };
  auto test = [&](const ToyDetectorParams<float>& det, Mode mode) {
    InferenceConfig ic = s.inference;
    ic.mode = mode;
    ic.plus_p = s.plus_p;
    return evaluate_dataset(val, det, &guidance, ic);
  };

  std::vector<AblationRow> rows;
  const auto dense = fit(TrainStrategy::kDense, 0);
  rows.push_back({"dense", TrainStrategy::kDense, Mode::kDense, 0, test(dense, Mode::kDense)});
  rows.push_back({"predicted_no_retrain", TrainStrategy::kDense, Mode::kGuided, 0, test(dense, Mode::kGuided)});
  const auto predicted = fit(TrainStrategy::kPredicted, 0);
  rows.push_back({"predicted_retrain", TrainStrategy::kPredicted, Mode::kGuided, 0, test(predicted, Mode::kGuided)});
  const auto guided = fit(TrainStrategy::kGroundTruthSynthesis, s.guided_p);
  rows.push_back({"gt_synthesis_guided", TrainStrategy::kGroundTruthSynthesis, Mode::kGuided, s.guided_p,
                  test(guided, Mode::kGuided)});
  const auto plus = s.plus_p == s.guided_p ? guided : fit(TrainStrategy::kGroundTruthSynthesis, s.plus_p);
  rows.push_back({"gt_synthesis_plus", TrainStrategy::kGroundTruthSynthesis, Mode::kGuidedPlus, s.plus_p,
                  test(plus, Mode::kGuidedPlus)});
  return rows;
}

/// F(gt_synthesis_guided) >= F(predicted_retrain) >= F(predicted_no_retrain).
inline bool ablation_ordering_holds(const std::vector<AblationRow>& rows) {
  auto f = [&](const std::string& name) {
    for (const auto& r : rows)
      if (r.name == name) return r.eval.counts.f_measure();
    return -1.0;
  };
  return f("gt_synthesis_guided") >= f("predicted_retrain") && f("predicted_retrain") >= f("predicted_no_retrain");
}

inline CsvTable ablation_table(const std::vector<AblationRow>& rows) {
  const std::string nd = kNondeterministicSuffix;
  CsvTable t({"strategy", "train", "test", "synthesis_p", "images_gt", "detections", "matched", "precision", "recall",
              "f_measure", "macs", "dense_macs", "mac_ratio", "mac_reduction", "mask_area", "guidance_seconds" + nd,
              "detector_seconds" + nd});
  for (const auto& r : rows) {
    const auto& e = r.eval;
    t.row({r.name, to_string(r.train), to_string(r.test), num(r.synthesis_p), num(e.counts.ground_truth),
           num(e.counts.detections), num(e.counts.matched), num(e.counts.precision()), num(e.counts.recall()),
           num(e.counts.f_measure()), num(e.macs), num(e.dense_macs), num(e.mac_ratio()), num(r.mac_reduction()),
           num(e.mask_area), num(e.guidance_seconds), num(e.detector_seconds)});
  }
  return t;
}

/// Mask quality and, when a detector is given, guided detection quality and
/// cost at each threshold.
struct TauRow {
  SweepRow mask;
  std::optional<EvalSummary> detection;
};

inline std::vector<TauRow> run_tau_sweep(const Dataset& val, const GuidanceNetParams<float>& guidance,
                                         const std::vector<double>& taus, const ToyDetectorParams<float>* det = nullptr,
                                         InferenceConfig inference = {}) {
  std::vector<GuidanceMap> maps(val.size());
  std::vector<GuidanceMask> gts(val.size());
#pragma omp parallel for schedule(dynamic) num_threads(num_threads())
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(val.size()); ++i) {
    const auto& s = val[static_cast<std::size_t>(i)];
    const Image8 padded = pad_to_multiple(s.image, 32);
    maps[static_cast<std::size_t>(i)] = guidance_forward(image_to_tensor<float>(padded), guidance);
    gts[static_cast<std::size_t>(i)] = gt_mask_from_boxes(padded.width, padded.height, s.boxes);
  }
  std::vector<TauRow> rows;
  for (const auto& m : pr_sweep(maps, gts, taus)) {
    TauRow r{m, std::nullopt};
    if (det) {
      inference.mode = Mode::kGuided;
      inference.tau = m.tau;
      r.detection = evaluate_dataset(val, *det, &guidance, inference);
    }
    rows.push_back(r);
  }
  return rows;
}

inline CsvTable tau_table(const std::vector<TauRow>& rows) {
  CsvTable t({"tau", "recall", "precision", "area_ratio", "f_measure", "mac_ratio"});
  for (const auto& r : rows)
    t.row({num(r.mask.tau), num(r.mask.recall), num(r.mask.precision), num(r.mask.area_ratio),
           r.detection ? num(r.detection->counts.f_measure()) : "", r.detection ? num(r.detection->mac_ratio()) : ""});
  return t;
}

struct PSweepRow {
  double p = 0;
  EvalSummary guided;       // tested with the background zeroed
  EvalSummary guided_plus;  // tested with the background scaled by p
};

struct PSweepResult {
  EvalSummary dense;  // dense-trained, dense-tested reference
  std::vector<PSweepRow> rows;

  /// Some p strictly inside the sweep beats both ends in guided F.
  bool guided_interior_maximum() const {
    if (rows.size() < 3) return false;
    const double ends = std::max(rows.front().guided.counts.f_measure(), rows.back().guided.counts.f_measure());
    for (std::size_t i = 1; i + 1 < rows.size(); ++i)
      if (rows[i].guided.counts.f_measure() > ends) return true;
    return false;
  }
};

/// For every p: trains with ground truth + synthesis at rate p, then tests
/// guided and guided plus (scale p). All runs share one initialization seed,
/// so p = 1 training reproduces dense training exactly.
inline PSweepResult run_p_sweep(const Dataset& train, const Dataset& val, const GuidanceNetParams<float>& guidance,
                                const std::vector<double>& ps, DetectorTrainConfig train_cfg, InferenceConfig inference) {
  PSweepResult res;
  train_cfg.strategy = TrainStrategy::kDense;
  const auto dense = train_detector<float>(train, train_cfg).params;
  inference.mode = Mode::kDense;
  res.dense = evaluate_dataset(val, dense, &guidance, inference);
  train_cfg.strategy = TrainStrategy::kGroundTruthSynthesis;
  for (double p : ps) {
    train_cfg.synthesis.p = p;
    const auto det = train_detector<float>(train, train_cfg).params;
    PSweepRow row;
    row.p = p;
    inference.mode = Mode::kGuided;
    row.guided = evaluate_dataset(val, det, &guidance, inference);
    inference.mode = Mode::kGuidedPlus;
    inference.plus_p = p;
    row.guided_plus = evaluate_dataset(val, det, &guidance, inference);
    res.rows.push_back(row);
  }
  return res;
}

inline CsvTable p_sweep_table(const PSweepResult& r) {
  CsvTable t({"p", "dense_f_measure", "guided_f_measure", "guided_plus_f_measure", "guided_mac_ratio",
              "guided_plus_mac_ratio"});
  for (const auto& row : r.rows)
    t.row({num(row.p), num(r.dense.counts.f_measure()), num(row.guided.counts.f_measure()),
           num(row.guided_plus.counts.f_measure()), num(row.guided.mac_ratio()), num(row.guided_plus.mac_ratio())});
  return t;
}

}  // namespace gcnn

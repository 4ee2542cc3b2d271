#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcnn/detector.hpp"
#include "gcnn/guidance_net.hpp"
#include "gcnn/pipeline.hpp"
#include "gcnn/scene.hpp"

namespace gcnn {

struct DataConfig {
  std::size_t train = 500;
  std::size_t val = 100;
  std::string train_dir;  // default <out>/data/train
  std::string val_dir;    // default <out>/data/val
  SceneSpec scene{};
};

struct BenchConfig {
  std::vector<double> ratios{1.0, 0.5, 0.25, 0.125};
  std::vector<int> threads{1};
  std::size_t runs = 20;
  std::size_t warmup = 3;
  std::size_t channels = 64;
  std::size_t size = 256;
  std::size_t layers = 1;  // depth of the benchmarked 3x3 conv+relu stack
  std::size_t pipeline_images = 10;
};

struct SweepConfig {
  std::vector<double> taus{0.1, 0.2, 0.3, 0.4};
  std::vector<double> ps{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
};

/// Everything a CLI run needs. Keys mirror the JSON layout; see README.
struct Config {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "gcnn-out";
  DataConfig data{};
  GuidanceTrainConfig guidance{};
  DetectorTrainConfig detector{};
  InferenceConfig inference{};
  std::string guidance_weights;  // default <out>/guidance.gcw
  std::string detector_weights;  // default <out>/detector.gcw
  BenchConfig bench{};
  SweepConfig sweep{};

  std::string train_dir() const { return data.train_dir.empty() ? out + "/data/train" : data.train_dir; }
  std::string val_dir() const { return data.val_dir.empty() ? out + "/data/val" : data.val_dir; }
  std::string guidance_path() const { return guidance_weights.empty() ? out + "/guidance.gcw" : guidance_weights; }
  std::string detector_path() const { return detector_weights.empty() ? out + "/detector.gcw" : detector_weights; }

  /// Seeds of the individual stages, all derived from the top-level seed
  /// unless the config pins them.
  void derive_seeds() {
    guidance.seed = derive_seed(seed, 1);
    detector.seed = derive_seed(seed, 2);
    if (!synthesis_seed_pinned) detector.synthesis.seed = derive_seed(seed, 3);
  }
  bool synthesis_seed_pinned = false;
};

namespace detail {

using nlohmann::json;

// Reads the members of one JSON object and rejects any key it was not asked
// about, so a typo in a config file fails loudly.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("invalid-config", where("") + " must be a JSON object");
  }

  template <typename V>
  void get(const std::string& key, V& dst) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      dst = it->template get<V>();
    } catch (const json::exception&) {
      throw ConfigError("invalid-config", where(key) + " has the wrong type");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  /// Nested object under `key` (an empty object when absent).
  ObjectReader child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return ObjectReader(it == j_.end() ? empty() : *it, where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("invalid-config-key", "unknown config key '" + where(k) + "'");
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_sgd(ObjectReader& r, SgdConfig& sgd, double& decay_at, std::size_t& epochs, std::size_t& batch) {
  r.get("epochs", epochs);
  r.get("batch_size", batch);
  r.get("lr", sgd.lr);
  r.get("momentum", sgd.momentum);
  r.get("weight_decay", sgd.weight_decay);
  r.get("lr_decay_at", decay_at);
}

}  // namespace detail

/// Parses a JSON config. Missing keys keep their defaults; unknown keys and
/// ill-typed or out-of-range values are errors.
inline Config parse_config(const nlohmann::json& j) {
  Config c;
  detail::ObjectReader root(j, "");
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  root.get("out", c.out);
  std::string mode = to_string(c.inference.mode);
  root.get("mode", mode);
  root.get("tau", c.inference.tau);
  root.get("plus_p", c.inference.plus_p);
  root.get("mask_dilate", c.inference.dilate);
  root.get("guidance_weights", c.guidance_weights);
  root.get("detector_weights", c.detector_weights);
  try {
    c.inference.mode = parse_mode(mode);
  } catch (const ValueError& e) {
    throw ConfigError("invalid-config", std::string("mode: ") + e.what());
  }

  {
    auto d = root.child("data");
    d.get("train", c.data.train);
    d.get("val", c.data.val);
    d.get("train_dir", c.data.train_dir);
    d.get("val_dir", c.data.val_dir);
    auto s = d.child("scene");
    auto& sc = c.data.scene;
    s.get("width", sc.width);
    s.get("height", sc.height);
    s.get("bucket", sc.bucket);
    s.get("min_boxes", sc.min_boxes);
    s.get("max_boxes", sc.max_boxes);
    s.get("min_box_w", sc.min_box_w);
    s.get("max_box_w", sc.max_box_w);
    s.get("min_box_h", sc.min_box_h);
    s.get("max_box_h", sc.max_box_h);
    s.get("margin", sc.margin);
    s.get("gap", sc.gap);
    s.get("stripe_period", sc.stripe_period);
    s.get("noise", sc.noise);
    s.get("clutter", sc.clutter);
    s.get("tolerance", sc.tolerance);
    s.finish();
    d.finish();
  }
  {
    auto g = root.child("guidance");
    detail::read_sgd(g, c.guidance.sgd, c.guidance.lr_decay_at, c.guidance.epochs, c.guidance.batch_size);
    g.get("l2_epsilon", c.guidance.l2_epsilon);
    g.finish();
  }
  {
    auto d = root.child("detector");
    detail::read_sgd(d, c.detector.sgd, c.detector.lr_decay_at, c.detector.epochs, c.detector.batch_size);
    std::string strategy = to_string(c.detector.strategy);
    d.get("strategy", strategy);
    d.get("lambda", c.detector.loss.lambda);
    d.finish();
    try {
      c.detector.strategy = parse_strategy(strategy);
    } catch (const ValueError& e) {
      throw ConfigError("invalid-config", std::string("detector.strategy: ") + e.what());
    }
  }
  {
    auto s = root.child("synthesis");
    s.get("p", c.detector.synthesis.p);
    c.synthesis_seed_pinned = s.has("seed");
    s.get("seed", c.detector.synthesis.seed);
    s.finish();
  }
  {
    auto d = root.child("decode");
    d.get("score_thresh", c.inference.decode.score_thresh);
    d.get("nms_iou", c.inference.decode.nms_iou);
    d.finish();
  }
  {
    auto b = root.child("bench");
    b.get("ratios", c.bench.ratios);
    b.get("threads", c.bench.threads);
    b.get("runs", c.bench.runs);
    b.get("warmup", c.bench.warmup);
    b.get("channels", c.bench.channels);
    b.get("size", c.bench.size);
    b.get("layers", c.bench.layers);
    b.get("pipeline_images", c.bench.pipeline_images);
    b.finish();
  }
  {
    auto s = root.child("sweep");
    s.get("taus", c.sweep.taus);
    s.get("ps", c.sweep.ps);
    s.finish();
  }
  root.finish();

  auto bad = [](const std::string& m) { throw ConfigError("invalid-config", m); };
  if (c.threads < 1) bad("threads must be >= 1");
  if (!(c.inference.tau > 0 && c.inference.tau < 1)) bad("tau must lie in (0, 1)");
  if (!(c.inference.plus_p >= 0 && c.inference.plus_p <= 1)) bad("plus_p must lie in [0, 1]");
  if (!(c.detector.synthesis.p >= 0 && c.detector.synthesis.p <= 1)) bad("synthesis.p must lie in [0, 1]");
  if (!(c.guidance.l2_epsilon > 0)) bad("guidance.l2_epsilon must be > 0");
  if (c.bench.runs < 1) bad("bench.runs must be >= 1");
  for (double t : c.sweep.taus)
    if (!(t > 0 && t < 1)) bad("sweep.taus values must lie in (0, 1)");
  for (double p : c.sweep.ps)
    if (!(p >= 0 && p <= 1)) bad("sweep.ps values must lie in [0, 1]");
  for (double r : c.bench.ratios)
    if (!(r >= 0 && r <= 1)) bad("bench.ratios values must lie in [0, 1]");
  try {
    c.data.scene.validate();
  } catch (const ValueError& e) {
    bad(e.what());
  }
  c.detector.tau = c.inference.tau;
  c.guidance.tau = c.inference.tau;
  c.derive_seeds();
  return c;
}

inline Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid-config", path + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace gcnn

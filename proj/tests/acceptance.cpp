// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Runs everything at full size; expect roughly half an hour
// on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gcnn/cli.hpp"
#include "gcnn/gcnn.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace gcnn;
namespace fs = std::filesystem;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

// ---- 1 ----------------------------------------------------------------------

Outcome guided_conv_equivalence() {
  const auto t0 = clock_type::now();
  std::mt19937_64 rng(101);
  std::size_t masked = 0, background = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = std::array<std::size_t, 3>{1, 3, 5}[rng() % 3];
    const std::size_t stride = 1 + rng() % 2, pad = rng() % (k / 2 + 1);
    const std::size_t n = 1 + rng() % 2, ci = 1 + rng() % 6, co = 1 + rng() % 6;
    const std::size_t h = k + rng() % 36, w = k + rng() % 36;
    Tensor<float> x(n, ci, h, w);
    oracle::fill_uniform(x, rng);
    const auto layer = oracle::random_layer<float>(co, ci, k, stride, pad, rng);
    const auto dense = dense_conv2d(x, layer);
    const auto view = oracle::random_view(dense.h(), dense.w(), std::uniform_real_distribution<double>(0, 1)(rng), rng);
    const auto guided = guided_conv2d(x, layer, view);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < co; ++c)
        for (std::size_t i = 0; i < view.size(); ++i) {
          const float g = guided.plane(b, c)[i], d = dense.plane(b, c)[i];
          if (view.cells[i] ? !same_bits(g, d) : !same_bits(g, 0.0f))
            return {false, fmt("config %d: cell %zu differs (%.9g vs %.9g)", t, i, g, view.cells[i] ? d : 0.0f)};
          ++(view.cells[i] ? masked : background);
        }
    const auto full = guided_conv2d(x, layer, MaskView(dense.h(), dense.w(), true));
    if (std::memcmp(full.data(), dense.data(), dense.size() * sizeof(float)) != 0)
      return {false, fmt("config %d: full mask is not bit-identical to dense", t)};
  }
  const double s = seconds_since(t0);
  return {s < 30, fmt("100 configs, %zu masked cells bit-exact, %zu background cells exactly 0, full masks "
                      "bit-identical; %.2f s (limit 30 s)", masked, background, s)};
}

// ---- 2 ----------------------------------------------------------------------

Outcome stacked_interior() {
  std::mt19937_64 rng(202);
  double worst = 0;
  std::size_t interior = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t c = 1 + rng() % 8, h = 32 + rng() % 49, w = 32 + rng() % 49, block = 4 + rng() % 9;
    Tensor<float> x(1, c, h, w);
    oracle::fill_uniform(x, rng);
    std::vector<ConvLayer<float>> layers;
    for (int l = 0; l < 3; ++l) layers.push_back(oracle::random_layer<float>(c, c, 3, 1, 1, rng));
    GuidanceMask grid = GuidanceMask::for_image(h, w, false, block);
    std::bernoulli_distribution on(std::uniform_real_distribution<double>(0.4, 0.9)(rng));
    for (auto& cell : grid.cells) cell = on(rng);
    const MaskView view = mask_project(grid, h, w, h, w);
    Tensor<float> d = x, g = x;
    for (const auto& l : layers) {
      d = relu(dense_conv2d(d, l));
      g = guided_pointwise(PointwiseOp::kRelu, guided_conv2d(g, l, view), view);
    }
    // Interior: every cell within Chebyshev distance 3 is in the mask.
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        bool inside = true;
        for (long dy = -3; dy <= 3 && inside; ++dy)
          for (long dx = -3; dx <= 3 && inside; ++dx) {
            const long yy = static_cast<long>(y) + dy, xc = static_cast<long>(xx) + dx;
            if (yy < 0 || xc < 0 || yy >= static_cast<long>(h) || xc >= static_cast<long>(w)) continue;
            inside = view.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xc));
          }
        if (!inside) continue;
        ++interior;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double dv = d.at(0, ch, y, xx), gv = g.at(0, ch, y, xx);
          worst = std::max(worst, std::abs(gv - dv) / std::max(std::abs(dv), 1e-6));
        }
      }
  }
  return {worst <= 1e-4 && interior > 0,
          fmt("20 three-layer stacks, %zu interior cells, worst relative difference %.3g (limit 1e-4)", interior, worst)};
}

// ---- 3 and 4 ----------------------------------------------------------------

struct BenchRun {
  std::vector<BenchRecord> rows;
  BenchSettings settings;
  double seconds = 0;
};

BenchRun layer_bench() {
  BenchRun b;
  b.settings.ratios = {1.0, 0.5, 0.25, 0.125};
  b.settings.threads = {1};
  b.settings.runs = 20;
  b.settings.warmup = 3;
  b.settings.channels = 64;
  b.settings.size = 256;
  b.settings.layers = 1;
  const auto t0 = clock_type::now();
  b.rows = run_bench(b.settings);
  b.seconds = seconds_since(t0);
  return b;
}

Outcome flop_proportionality(const BenchRun& bench) {
  std::size_t checked = 0;
  for (const auto& r : bench.rows) {
    if (r.mode != Mode::kGuided) continue;
    const auto view = block_mask_view(bench.settings.size, r.ratio, derive_seed(bench.settings.seed, 7));
    if (r.macs * view.size() != r.dense_macs * view.count())
      return {false, fmt("bench ratio %g: %llu/%llu MACs but area %zu/%zu", r.ratio, (unsigned long long)r.macs,
                         (unsigned long long)r.dense_macs, view.count(), view.size())};
    ++checked;
  }
  // Every detector layer under random guidance masks.
  std::mt19937_64 rng(303);
  const auto det = ToyDetectorParams<float>::init(1);
  for (int t = 0; t < 50; ++t) {
    GuidanceMask m(8, 8);
    std::bernoulli_distribution on(std::uniform_real_distribution<double>(0, 1)(rng));
    for (auto& c : m.cells) c = on(rng);
    Shape s{1, 1, 256, 256};
    for (const auto* l : det.layers()) {
      s = l->output_shape(s);
      const auto view = mask_project(m, s.h, s.w, 256, 256, MaskAnchor::kCentered);
      if (flop_count(*l, s, view) * view.size() != flop_count(*l, s) * view.count())
        return {false, fmt("detector layer at %zux%zu: MACs not proportional to area", s.h, s.w)};
      ++checked;
    }
  }
  return {true, fmt("%zu (layer, mask) pairs: guided/dense MACs == true cells/all cells as exact integers", checked)};
}

Outcome wallclock_speedup(const BenchRun& bench) {
  double s4 = 0, s8 = 0, s1 = 0;
  for (const auto& r : bench.rows) {
    if (r.mode != Mode::kGuided) continue;
    if (r.ratio == 0.25) s4 = r.speedup();
    if (r.ratio == 0.125) s8 = r.speedup();
    if (r.ratio == 1.0) s1 = r.speedup();
  }
  const double dense_ms = bench.rows.front().dense_median_ns / 1e6;
  return {s4 >= 2.0 && s8 >= 3.0 && bench.seconds < 120,
          fmt("64->64 3x3 on 256x256, 1 thread, median of 20: dense %.1f ms, speedup %.2fx at 1/4 (need 2.0), "
              "%.2fx at 1/8 (need 3.0), full-mask guided/dense time %.2f; bench %.1f s (limit 120 s)",
              dense_ms, s4, s8, s1 > 0 ? 1 / s1 : 0.0, bench.seconds)};
}

// ---- 5 ----------------------------------------------------------------------

Outcome gt_mask_rule() {
  std::mt19937_64 rng(505);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t W = 1 + rng() % 200, H = 1 + rng() % 200;
    std::vector<BBox> boxes;
    for (std::size_t i = 0, n = rng() % 5; i < n; ++i) {
      const double x = static_cast<double>(rng() % W), y = static_cast<double>(rng() % H);
      const double w = 1 + static_cast<double>(rng() % std::min<std::size_t>(60, W - static_cast<std::size_t>(x)));
      const double h = 1 + static_cast<double>(rng() % std::min<std::size_t>(60, H - static_cast<std::size_t>(y)));
      boxes.push_back({x, y, w, h});
    }
    if (gt_mask_from_boxes(W, H, boxes) != oracle::gt_mask_by_pixels(W, H, boxes))
      return {false, fmt("case %d (%zux%zu, %zu boxes) differs from the pixel oracle", t, W, H, boxes.size())};
  }
  return {true, "1000 random cases identical to the pixel-enumeration oracle"};
}

// ---- 6 ----------------------------------------------------------------------

Outcome synthesis_statistics() {
  std::mt19937_64 rng(606);
  GuidanceMask m(150, 150);
  for (auto& c : m.cells) c = rng() % 5 == 0;
  const double background = static_cast<double>(m.size() - m.count());
  std::string detail = fmt("%.0f background cells;", background);
  bool ok = background >= 1e4;
  for (double p : {0.2, 0.4, 0.8}) {
    const auto e = extend_mask_random(m, {p, 6060});
    bool monotone = true;
    for (std::size_t i = 0; i < m.size(); ++i) monotone = monotone && (!m.cells[i] || e.cells[i]);
    const double flips = static_cast<double>(e.count() - m.count());
    const double z = (flips - p * background) / std::sqrt(background * p * (1 - p));
    ok = ok && monotone && std::abs(z) <= 3;
    detail += fmt(" p=%.1f rate %.4f (z=%+.2f)", p, flips / background, z);
  }
  const bool identity = extend_mask_random(m, {0.0, 1}) == m;
  const bool all_true = extend_mask_random(m, {1.0, 1}).count() == m.size();
  ok = ok && identity && all_true;
  detail += fmt("; p=0 identity %s, p=1 all true %s", identity ? "yes" : "no", all_true ? "yes" : "no");
  return {ok, detail};
}

// ---- 7 ----------------------------------------------------------------------

// Averages a linear conv over many synthesis draws (background zeroed outside
// the drawn mask) and compares with the conv of the p-scaled features. The
// mask blocks are 16 px, so every output cell sees at most 4 blocks and the
// average has the variance of a handful of Bernoulli means.
Outcome dropout_expectation() {
  const std::size_t draws = 40000;
  std::mt19937_64 rng(707);
  Tensor<double> x(1, 4, 48, 48);
  oracle::fill_uniform(x, rng, 0.1, 1.0);
  auto layer = ConvLayer<double>::make(3, 4, 3, 3, 1, 1);
  oracle::fill_uniform(layer.weights, rng, 0.0, 1.0);
  GuidanceMask m(3, 3, false, 16);
  m.set(0, 0, true);
  m.set(1, 1, true);
  m.set(2, 0, true);
  const MaskView view = mask_project(m, 48, 48, 48, 48);
  double worst = 0;
  std::string detail;
  for (double p : {0.4, 0.8}) {
    Tensor<double> sum(1, 3, 48, 48);
    for (std::size_t d = 0; d < draws; ++d) {
      const auto ext = extend_mask_random(m, {p, derive_seed(77, d)});
      const MaskView v = mask_project(ext, 48, 48, 48, 48);
      const auto y = dense_conv2d(guided_pointwise(PointwiseOp::kScale, x, v, 0.0), layer);
      for (std::size_t i = 0; i < y.size(); ++i) sum[i] += y[i];
    }
    const auto expect = dense_conv2d(scale_background(x, view, p), layer);
    double w = 0;
    for (std::size_t i = 0; i < sum.size(); ++i)
      w = std::max(w, std::abs(sum[i] / static_cast<double>(draws) - expect[i]) / std::abs(expect[i]));
    worst = std::max(worst, w);
    detail += fmt("p=%.1f worst %.3f%%; ", p, 100 * w);
  }
  return {worst <= 0.02, fmt("%zu draws per p: %severy cell within 2%%", draws, detail.c_str())};
}

// ---- 8 ----------------------------------------------------------------------

Outcome gradient_checks() {
  const auto g = gradcheck::guidance_net(9);
  const auto d = gradcheck::detector(Mode::kDense, 11);
  const auto q = gradcheck::detector(Mode::kGuided, 12);
  return {g.ok() && d.ok() && q.ok(),
          fmt("float64, 96x64 input (3x2 cells); worst per-layer relative error: guidance %.2g, detector dense %.2g, "
              "detector guided %.2g (limit 1e-5); relu-kink exclusions %zu/%zu, %zu/%zu, %zu/%zu",
              g.worst(), d.worst(), q.worst(), g.kinks(), g.checked(), d.kinks(), d.checked(), q.kinks(), q.checked())};
}

// ---- 9, 10, 11 --------------------------------------------------------------

struct Desk {
  Dataset train, val;
  GuidanceNetParams<float> guidance;
  DetectorTrainConfig base;
  InferenceConfig inference;
  ToyDetectorParams<float> guided;
  EvalSummary dense_eval, guided_eval;
  double seconds = 0;
};

Desk desk_experiment() {
  const auto t0 = clock_type::now();
  Desk d;
  d.train = make_dataset(500, SceneSpec{}, derive_seed(9, 10));
  d.val = make_dataset(100, SceneSpec{}, derive_seed(9, 11));
  GuidanceTrainConfig gc;
  gc.seed = derive_seed(9, 1);
  d.guidance = train_guidance<float>(d.train, gc).params;
  d.base.seed = derive_seed(9, 2);
  d.base.synthesis.seed = derive_seed(9, 3);
  d.inference.tau = 0.2;

  DetectorTrainConfig dense_cfg = d.base;
  dense_cfg.strategy = TrainStrategy::kDense;
  const auto dense = train_detector<float>(d.train, dense_cfg).params;
  DetectorTrainConfig guided_cfg = d.base;
  guided_cfg.strategy = TrainStrategy::kGroundTruthSynthesis;
  guided_cfg.synthesis.p = 0.4;
  d.guided = train_detector<float>(d.train, guided_cfg).params;

  InferenceConfig ic = d.inference;
  ic.mode = Mode::kDense;
  d.dense_eval = evaluate_dataset(d.val, dense, &d.guidance, ic);
  ic.mode = Mode::kGuided;
  d.guided_eval = evaluate_dataset(d.val, d.guided, &d.guidance, ic);
  d.seconds = seconds_since(t0);
  return d;
}

Outcome end_to_end(const Desk& d) {
  const double fd = d.dense_eval.counts.f_measure(), fg = d.guided_eval.counts.f_measure();
  const double ratio = d.guided_eval.mac_ratio();
  return {fg >= fd - 0.02 && ratio <= 0.5 && d.seconds < 30 * 60,
          fmt("500/100 images: dense F %.4f, guided F %.4f (need >= %.4f), guided MACs %.3fx dense (need <= 0.5), "
              "mean mask area %.3f; run %.1f min (limit 30)",
              fd, fg, fd - 0.02, ratio, d.guided_eval.mask_area, d.seconds / 60)};
}

Outcome guided_plus_trend(const Desk& d) {
  int wins = 0;
  std::string detail;
  for (int s = 0; s < 3; ++s) {
    DetectorTrainConfig c = d.base;
    c.strategy = TrainStrategy::kGroundTruthSynthesis;
    if (s > 0) {
      c.seed = derive_seed(9, 2, s);
      c.synthesis.seed = derive_seed(9, 3, s);
    }
    InferenceConfig ic = d.inference;
    ToyDetectorParams<float> guided = d.guided;
    if (s > 0) {
      c.synthesis.p = 0.4;
      guided = train_detector<float>(d.train, c).params;
    }
    ic.mode = Mode::kGuided;
    const EvalCounts cg = s == 0 ? d.guided_eval.counts : evaluate_dataset(d.val, guided, &d.guidance, ic).counts;
    c.synthesis.p = 0.8;
    const auto plus = train_detector<float>(d.train, c).params;
    ic.mode = Mode::kGuidedPlus;
    ic.plus_p = 0.8;
    const EvalCounts cp = evaluate_dataset(d.val, plus, &d.guidance, ic).counts;
    const double fg = cg.f_measure(), fp = cp.f_measure();
    wins += fp >= fg;
    detail += fmt("seed %d: guided+ %.4f (%zu/%zu) vs guided %.4f (%zu/%zu); ", s + 1, fp, cp.matched, cp.detections, fg,
                  cg.matched, cg.detections);
  }
  return {wins >= 2, detail + fmt("guided+ >= guided in %d of 3 (need 2)", wins)};
}

Outcome tau_sweep(const Desk& d) {
  const std::vector<double> taus{0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const auto rows = run_tau_sweep(d.val, d.guidance, taus);
  bool monotone = true;
  double best = 0;
  std::string detail;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) monotone = monotone && rows[i].mask.recall <= rows[i - 1].mask.recall;
    best = std::max(best, rows[i].mask.recall);
    detail += fmt("%.2f:%.3f ", rows[i].mask.tau, rows[i].mask.recall);
  }
  return {monotone && best >= 0.9,
          fmt("recall by tau %s; non-increasing %s, best %.3f (need >= 0.90)", detail.c_str(), monotone ? "yes" : "no",
              best)};
}

// ---- 12 ---------------------------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gcnn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Compares every file of two output trees: CSVs column by column skipping
// timing columns, everything else byte for byte.
std::optional<std::string> compare_trees(const fs::path& a, const fs::path& b, std::size_t& files) {
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (rel == "config.json") continue;
    if (!fs::exists(b / rel)) return rel.string() + " missing in second run";
    ++files;
    const std::string x = slurp(e.path()), y = slurp(b / rel);
    if (e.path().extension() != ".csv") {
      if (x != y) return rel.string() + " differs";
      continue;
    }
    const auto tx = parse_csv(x), ty = parse_csv(y);
    if (tx.size() != ty.size()) return rel.string() + " row count differs";
    for (std::size_t r = 0; r < tx.size(); ++r) {
      if (tx[r].size() != ty[r].size()) return rel.string() + " column count differs";
      for (std::size_t c = 0; c < tx[r].size(); ++c)
        if (tx[0][c].find(kNondeterministicSuffix) == std::string::npos && tx[r][c] != ty[r][c])
          return rel.string() + " column " + tx[0][c] + " row " + std::to_string(r) + ": " + tx[r][c] + " vs " + ty[r][c];
    }
  }
  return std::nullopt;
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "gcnn_acceptance_determinism";
  fs::remove_all(root);
  const std::string config = R"({
    "seed": 12,
    "data": {"train": 24, "val": 8},
    "guidance": {"epochs": 3},
    "detector": {"epochs": 2},
    "sweep": {"taus": [0.1, 0.3], "ps": [0.0, 1.0]},
    "bench": {"runs": 2, "warmup": 0, "channels": 8, "size": 64, "pipeline_images": 2}
  })";
  const std::vector<std::vector<std::string>> steps{{"gen-data"}, {"train-guidance"}, {"train-detector"}, {"eval"},
                                                    {"mask-stats"}, {"sweep"},          {"ablate"},         {"bench"}};
  std::vector<fs::path> outs;
  for (int threads : {1, 3, 1}) {
    const auto out = root / ("run" + std::to_string(outs.size()) + "_t" + std::to_string(threads));
    fs::create_directories(out);
    std::ofstream(out / "config.json") << config;
    for (auto step : steps) {
      step.insert(step.end(), {"--config", (out / "config.json").string(), "--out", out.string(), "--threads",
                               std::to_string(threads)});
      if (cli(step) != 0) return {false, "step " + step[0] + " failed"};
    }
    outs.push_back(out);
  }
  std::size_t files = 0;
  for (std::size_t i = 1; i < outs.size(); ++i)
    if (auto diff = compare_trees(outs[0], outs[i], files)) return {false, *diff};
  set_num_threads(1);
  return {true, fmt("gen-data, train-guidance, train-detector, eval, mask-stats, sweep, ablate and bench rerun at 1, "
                    "3 and 1 threads: %zu file comparisons identical outside timing columns", files)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    const auto t0 = clock_type::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s  C%-2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  };
  set_num_threads(1);
  report(1, "guided-conv equivalence", guided_conv_equivalence);
  report(2, "stacked interior equivalence", stacked_interior);
  const BenchRun bench = layer_bench();
  report(3, "FLOP proportionality", [&] { return flop_proportionality(bench); });
  report(4, "wall-clock speedup", [&] { return wallclock_speedup(bench); });
  report(5, "GT mask rule", gt_mask_rule);
  report(6, "synthesis statistics", synthesis_statistics);
  report(7, "dropout-expectation identity", dropout_expectation);
  report(8, "gradient checks", gradient_checks);
  std::optional<Desk> desk;
  try {
    desk = desk_experiment();
  } catch (const std::exception& e) {
    std::printf("desk experiment threw: %s\n", e.what());
  }
  auto need_desk = [&](auto f) {
    return [&, f]() -> Outcome { return desk ? f(*desk) : Outcome{false, "desk experiment did not run"}; };
  };
  report(9, "end-to-end desk experiment", need_desk(end_to_end));
  report(10, "guided-plus trend", need_desk(guided_plus_trend));
  report(11, "tau sweep sanity", need_desk(tau_sweep));
  report(12, "determinism", determinism);
  std::printf("%d of 12 criteria passed\n", 12 - failures);
  return failures == 0 ? 0 : 1;
}

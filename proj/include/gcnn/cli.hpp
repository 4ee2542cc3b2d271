#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gcnn/gcnn.hpp"

namespace gcnn {

namespace cli_detail {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::vector<double> ratios;
  std::string image;
  std::string output;
  std::string split = "val";
};

inline Config resolve_config(const Options& o) {
  Config c = o.config_path.empty() ? parse_config(nlohmann::json::object()) : load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.threads) {
    if (*o.threads < 1) throw ConfigError("invalid-config", "--threads must be >= 1");
    c.threads = *o.threads;
  }
  if (o.out) c.out = *o.out;
  if (o.mode) {
    try {
      c.inference.mode = parse_mode(*o.mode);
    } catch (const ValueError& e) {
      throw ConfigError("invalid-config", std::string("--mode: ") + e.what());
    }
  }
  if (!o.ratios.empty()) {
    for (double r : o.ratios)
      if (!(r >= 0 && r <= 1)) throw ConfigError("invalid-config", "--ratios values must lie in [0, 1]");
    c.bench.ratios = o.ratios;
  }
  c.derive_seeds();
  set_num_threads(c.threads);
  fs::create_directories(c.out);
  return c;
}

inline std::uint64_t train_data_seed(const Config& c) { return derive_seed(c.seed, 10); }
inline std::uint64_t val_data_seed(const Config& c) { return derive_seed(c.seed, 11); }

inline Dataset load_split(const std::string& dir, const char* what) {
  if (!fs::is_directory(dir)) throw IoError(std::string(what) + " data directory " + dir + " (run gen-data first)");
  Dataset d = load_dataset(dir);
  if (d.empty()) throw IoError(std::string(what) + " data directory " + dir + " holds no images");
  return d;
}

// Fails listing every named artifact that does not exist.
inline void require_files(const std::vector<std::pair<std::string, std::string>>& named) {
  std::string missing;
  for (const auto& [name, path] : named)
    if (!fs::exists(path)) missing += (missing.empty() ? "" : ", ") + name + " (" + path + ")";
  if (!missing.empty()) throw IoError("missing artifacts: " + missing);
}

inline GuidanceNetParams<float> load_guidance(const Config& c) {
  auto g = load_weights<GuidanceNetParams<float>>(c.guidance_path());
  g.context.epsilon = c.guidance.l2_epsilon;
  g.tau = c.inference.tau;
  return g;
}

inline std::string path_in(const Config& c, const std::string& name) { return (fs::path(c.out) / name).string(); }

inline CsvTable loss_table(const std::vector<double>& losses) {
  CsvTable t({"epoch", "loss"});
  for (std::size_t i = 0; i < losses.size(); ++i) t.row({num(i + 1), num(losses[i])});
  return t;
}

inline CsvTable eval_table(const Config& c, const EvalSummary& e, std::size_t images) {
  const std::string nd = kNondeterministicSuffix;
  CsvTable t({"mode", "tau", "plus_p", "images", "ground_truth", "detections", "matched", "precision", "recall",
              "f_measure", "macs", "dense_macs", "mac_ratio", "mask_area", "guidance_seconds" + nd,
              "detector_seconds" + nd});
  t.row({to_string(c.inference.mode), num(c.inference.tau), num(c.inference.plus_p), num(images),
         num(e.counts.ground_truth), num(e.counts.detections), num(e.counts.matched), num(e.counts.precision()),
         num(e.counts.recall()), num(e.counts.f_measure()), num(e.macs), num(e.dense_macs), num(e.mac_ratio()),
         num(e.mask_area), num(e.guidance_seconds), num(e.detector_seconds)});
  return t;
}

inline void write_detections(const std::string& path, const std::vector<Detection>& dets) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto& d : dets)
    os << format_number(d.box.x) << ',' << format_number(d.box.y) << ',' << format_number(d.box.w) << ','
       << format_number(d.box.h) << ',' << format_number(d.score) << '\n';
}

// ---- subcommands -----------------------------------------------------------

inline void cmd_gen_data(const Config& c, std::ostream& out) {
  for (const auto& [dir, n, seed] : {std::tuple{c.train_dir(), c.data.train, train_data_seed(c)},
                                     std::tuple{c.val_dir(), c.data.val, val_data_seed(c)}}) {
    const Dataset d = make_dataset(n, c.data.scene, seed);
    if (fs::exists(dir))
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".pgm" || e.path().extension() == ".txt") fs::remove(e.path());
    save_dataset(dir, d);
    double ratio = 0;
    for (const auto& s : d) ratio += text_area_ratio(s.boxes, s.image.width, s.image.height);
    out << "wrote " << n << " images to " << dir << " (mean text area " << format_number(d.empty() ? 0 : ratio / n)
        << ")\n";
  }
}

inline void cmd_train_guidance(const Config& c, std::ostream& out) {
  const Dataset train = load_split(c.train_dir(), "train");
  const auto res = train_guidance<float>(train, c.guidance);
  save_weights(c.guidance_path(), res.params);
  loss_table(res.epoch_loss).write(path_in(c, "guidance_loss.csv"));
  out << "guidance loss " << format_number(res.initial_loss) << " -> " << format_number(res.final_loss) << ", saved "
      << c.guidance_path() << "\n";
}

inline void cmd_train_detector(const Config& c, std::ostream& out) {
  const Dataset train = load_split(c.train_dir(), "train");
  const bool predicted = c.detector.strategy == TrainStrategy::kPredicted ||
                         c.detector.strategy == TrainStrategy::kPredictedSynthesis;
  std::optional<GuidanceNetParams<float>> g;
  if (predicted) {
    require_files({{"guidance weights", c.guidance_path()}});
    g = load_guidance(c);
  }
  const auto res = train_detector<float>(train, c.detector, g ? &*g : nullptr);
  save_weights(c.detector_path(), res.params);
  loss_table(res.epoch_loss).write(path_in(c, "detector_loss.csv"));
  out << "detector (" << to_string(c.detector.strategy) << ") loss " << format_number(res.epoch_loss.front())
      << " -> " << format_number(res.epoch_loss.back()) << ", saved " << c.detector_path() << "\n";
}

inline void cmd_detect(const Config& c, const Options& o, std::ostream& out) {
  if (!fs::exists(o.image)) throw IoError(o.image);
  std::vector<std::pair<std::string, std::string>> need{{"detector weights", c.detector_path()}};
  if (c.inference.mode != Mode::kDense) need.emplace_back("guidance weights", c.guidance_path());
  require_files(need);
  const auto det = load_weights<ToyDetectorParams<float>>(c.detector_path());
  std::optional<GuidanceNetParams<float>> g;
  if (c.inference.mode != Mode::kDense) g = load_guidance(c);
  const Image8 img = read_image(o.image);
  const auto r = detect_image(img, det, g ? &*g : nullptr, c.inference);
  const std::string path =
      o.output.empty() ? path_in(c, "detections/" + fs::path(o.image).stem().string() + ".txt") : o.output;
  write_detections(path, r.detections);
  out << r.detections.size() << " detections written to " << path;
  if (c.inference.mode != Mode::kDense) out << " (mask area " << format_number(r.mask.area_ratio()) << ")";
  out << "\n";
}

inline void cmd_eval(const Config& c, const Options& o, std::ostream& out) {
  std::vector<std::pair<std::string, std::string>> need{{"detector weights", c.detector_path()}};
  if (c.inference.mode != Mode::kDense) need.emplace_back("guidance weights", c.guidance_path());
  require_files(need);
  const Dataset val = load_split(o.split == "train" ? c.train_dir() : c.val_dir(), o.split.c_str());
  const auto det = load_weights<ToyDetectorParams<float>>(c.detector_path());
  std::optional<GuidanceNetParams<float>> g;
  if (c.inference.mode != Mode::kDense) g = load_guidance(c);
  std::vector<ImageResult> per;
  const auto e = evaluate_dataset(val, det, g ? &*g : nullptr, c.inference, &per);
  eval_table(c, e, val.size()).write(path_in(c, "eval.csv"));
  CsvTable images({"image", "ground_truth", "detections", "matched", "mask_area", "macs"});
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto k = evaluate(per[i].detections, val[i].boxes);
    images.row({val[i].name, num(k.ground_truth), num(k.detections), num(k.matched),
                num(c.inference.mode == Mode::kDense ? 0.0 : per[i].mask.area_ratio()), num(per[i].macs)});
  }
  images.write(path_in(c, "eval_images.csv"));
  out << to_string(c.inference.mode) << ": F " << format_number(e.counts.f_measure()) << " P "
      << format_number(e.counts.precision()) << " R " << format_number(e.counts.recall()) << " MAC ratio "
      << format_number(e.mac_ratio()) << "\n";
}

inline void cmd_bench(const Config& c, std::ostream& out) {
  BenchSettings s;
  s.ratios = c.bench.ratios;
  s.threads = c.bench.threads;
  s.runs = c.bench.runs;
  s.warmup = c.bench.warmup;
  s.channels = c.bench.channels;
  s.size = c.bench.size;
  s.layers = c.bench.layers;
  s.plus_p = c.inference.plus_p;
  s.seed = derive_seed(c.seed, 4);
  const auto rows = run_bench(s);
  bench_table(rows).write(path_in(c, "bench.csv"));
  for (const auto& r : rows)
    out << to_string(r.mode) << " ratio " << format_number(r.ratio) << " threads " << r.threads << ": "
        << format_number(r.median_ns / 1e6) << " ms, speedup " << format_number(r.speedup()) << "\n";

  if (c.bench.pipeline_images == 0) return;
  const bool trained = fs::exists(c.guidance_path()) && fs::exists(c.detector_path());
  const auto g = trained ? load_guidance(c) : GuidanceNetParams<float>::init(c.guidance.seed);
  const auto det = trained ? load_weights<ToyDetectorParams<float>>(c.detector_path())
                           : ToyDetectorParams<float>::init(c.detector.seed);
  const Dataset data = make_dataset(c.bench.pipeline_images, c.data.scene, derive_seed(c.seed, 12));
  const auto split = run_pipeline_split(data, det, g, c.inference);
  split_table(split).write(path_in(c, "runtime_split.csv"));
  for (const auto& r : split)
    out << "pipeline " << to_string(r.mode) << (trained ? "" : " (untrained weights)") << ": guidance share "
        << format_number(r.guidance_share()) << "\n";
}

inline void cmd_ablate(const Config& c, std::ostream& out) {
  require_files({{"guidance weights", c.guidance_path()}});
  const Dataset train = load_split(c.train_dir(), "train");
  const Dataset val = load_split(c.val_dir(), "val");
  AblationSettings s;
  s.train = c.detector;
  s.inference = c.inference;
  s.guided_p = c.detector.synthesis.p;
  s.plus_p = c.inference.plus_p;
  const auto rows = run_ablation(train, val, load_guidance(c), s);
  ablation_table(rows).write(path_in(c, "ablation.csv"));
  for (const auto& r : rows)
    out << r.name << ": F " << format_number(r.eval.counts.f_measure()) << " MAC reduction "
        << format_number(r.mac_reduction()) << "\n";
  out << "ordering gt_synthesis >= predicted_retrain >= predicted_no_retrain: "
      << (ablation_ordering_holds(rows) ? "holds" : "does not hold") << "\n";
}

inline void cmd_sweep(const Config& c, std::ostream& out) {
  require_files({{"guidance weights", c.guidance_path()}});
  const Dataset train = load_split(c.train_dir(), "train");
  const Dataset val = load_split(c.val_dir(), "val");
  const auto g = load_guidance(c);
  std::optional<ToyDetectorParams<float>> det;
  if (fs::exists(c.detector_path())) det = load_weights<ToyDetectorParams<float>>(c.detector_path());
  const auto taus = run_tau_sweep(val, g, c.sweep.taus, det ? &*det : nullptr, c.inference);
  tau_table(taus).write(path_in(c, "tau_sweep.csv"));
  const auto ps = run_p_sweep(train, val, g, c.sweep.ps, c.detector, c.inference);
  p_sweep_table(ps).write(path_in(c, "p_sweep.csv"));
  for (const auto& r : taus)
    out << "tau " << format_number(r.mask.tau) << ": recall " << format_number(r.mask.recall) << " area "
        << format_number(r.mask.area_ratio) << "\n";
  for (const auto& r : ps.rows)
    out << "p " << format_number(r.p) << ": guided F " << format_number(r.guided.counts.f_measure())
        << " guided_plus F " << format_number(r.guided_plus.counts.f_measure()) << "\n";
  out << "guided interior maximum: " << (ps.guided_interior_maximum() ? "yes" : "no") << "\n";
}

inline void cmd_mask_stats(const Config& c, const Options& o, std::ostream& out) {
  const Dataset data = load_split(o.split == "train" ? c.train_dir() : c.val_dir(), o.split.c_str());
  std::optional<GuidanceNetParams<float>> g;
  if (fs::exists(c.guidance_path())) g = load_guidance(c);
  CsvTable t({"image", "boxes", "text_ratio", "gt_area", "pred_area", "recall", "precision"});
  double text = 0, gt_area = 0, pred_area = 0;
  for (const auto& s : data) {
    const Image8 padded = pad_to_multiple(s.image, 32);
    const auto gt = gt_mask_from_boxes(padded.width, padded.height, s.boxes);
    const double ratio = text_area_ratio(s.boxes, s.image.width, s.image.height);
    text += ratio;
    gt_area += gt.area_ratio();
    std::vector<std::string> row{s.name, num(s.boxes.size()), num(ratio), num(gt.area_ratio())};
    if (g) {
      const auto pred = binarize(guidance_forward(image_to_tensor<float>(padded), *g), c.inference.tau);
      const auto m = mask_metrics(pred, gt);
      pred_area += pred.area_ratio();
      row.insert(row.end(), {num(pred.area_ratio()), num(m.recall), num(m.precision)});
    } else {
      row.insert(row.end(), {"", "", ""});
    }
    t.row(row);
  }
  t.write(path_in(c, "mask_stats.csv"));
  const double n = static_cast<double>(data.size());
  out << data.size() << " images: mean text area " << format_number(text / n) << ", mean GT mask area "
      << format_number(gt_area / n);
  if (g) out << ", mean predicted mask area " << format_number(pred_area / n) << " at tau " << format_number(c.inference.tau);
  out << "\n";
}

inline std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace cli_detail

/// Entry point of the gcnn tool. Prints "error: <kind>: <message>" on a
/// single line and returns nonzero on failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  Options o;
  CLI::App app{"Guided convolution kernels and experiments", "gcnn"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config_path, "JSON config file");
  app.add_option("--seed", o.seed, "top-level seed");
  app.add_option("--threads", o.threads, "worker threads");
  app.add_option("--out", o.out, "output directory");

  auto* gen = app.add_subcommand("gen-data", "generate synthetic train and val scenes");
  auto* tg = app.add_subcommand("train-guidance", "train the guidance network");
  auto* td = app.add_subcommand("train-detector", "train the toy detector");
  auto* det = app.add_subcommand("detect", "detect text in one image");
  det->add_option("image", o.image, "input .pgm or .png")->required();
  det->add_option("-o,--output", o.output, "detection file (default <out>/detections/<name>.txt)");
  det->add_option("--mode", o.mode, "dense, guided or guided_plus");
  auto* ev = app.add_subcommand("eval", "evaluate on a split");
  ev->add_option("--mode", o.mode, "dense, guided or guided_plus");
  ev->add_option("--split", o.split, "val or train")->check(CLI::IsMember({"val", "train"}));
  auto* bench = app.add_subcommand("bench", "time dense vs guided layers");
  bench->add_option("--ratios", o.ratios, "mask area ratios, comma separated")->delimiter(',');
  auto* abl = app.add_subcommand("ablate", "train and compare the five strategies");
  auto* sw = app.add_subcommand("sweep", "tau and p sweeps");
  auto* ms = app.add_subcommand("mask-stats", "ground-truth and predicted mask statistics");
  ms->add_option("--split", o.split, "val or train")->check(CLI::IsMember({"val", "train"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ExtrasError& e) {
    const bool positional_only = argc > 1 && argv[1][0] != '-';
    const bool no_sub = app.get_subcommands().empty();
    err << "error: " << (no_sub && positional_only ? "unknown-subcommand" : "usage") << ": " << one_line(e.what())
        << "\n";
    return 2;
  } catch (const CLI::RequiredError& e) {
    if (app.get_subcommands().empty()) {
      // A stray word where the subcommand should be ends up among the leftovers.
      const auto rest = app.remaining();
      if (!rest.empty()) {
        err << "error: unknown-subcommand: '" << rest.front() << "' is not a subcommand\n";
        return 2;
      }
      err << "error: missing-subcommand: " << one_line(e.what()) << "\n";
      return 2;
    }
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    const Config c = resolve_config(o);
    if (gen->parsed()) cmd_gen_data(c, out);
    else if (tg->parsed()) cmd_train_guidance(c, out);
    else if (td->parsed()) cmd_train_detector(c, out);
    else if (det->parsed()) cmd_detect(c, o, out);
    else if (ev->parsed()) cmd_eval(c, o, out);
    else if (bench->parsed()) cmd_bench(c, out);
    else if (abl->parsed()) cmd_ablate(c, out);
    else if (sw->parsed()) cmd_sweep(c, out);
    else if (ms->parsed()) cmd_mask_stats(c, o, out);
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace gcnn

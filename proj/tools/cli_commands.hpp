#pragma once

// Subcommands of the convmcd tool. Each returns the process exit code:
//   0 success, 1 usage/internal error, 2 bad input files, 3 empty contour
//   with d3 targets, 4 training diverged, 5 gradient check failed.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "convmcd/config.hpp"
#include "convmcd/fmap.hpp"
#include "convmcd/gradcheck.hpp"
#include "convmcd/metrics.hpp"
#include "convmcd/png_io.hpp"
#include "convmcd/targets.hpp"
#include "convmcd/train.hpp"

namespace convmcd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kBadInput = 2,
  kEmptyContour = 3,
  kDiverged = 4,
  kGradcheckFailed = 5,
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Regular files in `dir` with the given extension, sorted by filename.
inline std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

inline RunConfig base_config(const std::optional<std::string>& path) {
  return path ? load_run_config(*path) : RunConfig{};
}

// ---------------------------------------------------------------- targets

struct TargetsArgs {
  std::string masks;
  std::string out;
  std::optional<std::string> distance;
  std::optional<std::string> radius;
  std::optional<std::string> config;
};

inline int cmd_targets(const TargetsArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg = base_config(args.config);
  if (args.distance) cfg.distance = parse_distance_kind(*args.distance);
  if (args.radius) cfg.radius = ContourRadius::parse(*args.radius);

  if (!fs::is_directory(args.masks)) {
    err << "error: mask directory " << args.masks << " does not exist\n";
    return kBadInput;
  }
  fs::create_directories(args.out);
  json files = json::array();
  for (const auto& path : list_files(args.masks, ".png")) {
    BinaryMask mask;
    try {
      mask = read_mask_png(path.string());
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return kBadInput;
    }
    TargetBundle bundle;
    try {
      bundle = make_targets(mask, cfg.distance, cfg.radius, cfg.d1_direction);
    } catch (const EmptyContour&) {
      err << "error: " << path.filename().string() << ": empty contour, cannot build " << to_string(cfg.distance)
          << " target\n";
      return kEmptyContour;
    }
    const std::string stem = path.stem().string();
    const std::string contour_name = stem + ".contour.png";
    const std::string dist_name = stem + ".dist.fmap";
    write_mask_png((fs::path(args.out) / contour_name).string(), bundle.contour);
    write_fmap((fs::path(args.out) / dist_name).string(), FloatMap::from_grid(bundle.distance.grid));
    files.push_back({{"mask", path.filename().string()},
                     {"width", mask.width()},
                     {"height", mask.height()},
                     {"radius", cfg.radius.resolve(mask.width(), mask.height())},
                     {"contour", contour_name},
                     {"distance", dist_name},
                     {"empty_source", bundle.distance.empty_source}});
    out << path.filename().string() << " -> " << contour_name << ", " << dist_name << "\n";
  }
  json manifest = {{"distance", std::string(to_string(cfg.distance))},
                   {"radius", cfg.radius.to_string()},
                   {"d1_direction", cfg.d1_direction == D1Direction::to_foreground ? "to_foreground" : "to_background"},
                   {"normalized", true},
                   {"files", files}};
  std::ofstream(fs::path(args.out) / "manifest.json") << manifest.dump(2) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string report;
  std::optional<std::string> csv;
  std::optional<std::string> trimap;
  std::optional<std::string> config;
  std::optional<double> mf_tolerance;
};

inline json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json report_to_json(const MetricsReport& report, const MetricProtocol& protocol) {
  json images = json::array();
  for (const auto& m : report.images) {
    images.push_back({{"name", m.name},
                      {"dice", m.dice},
                      {"jaccard", m.jaccard},
                      {"hd", nullable(m.hd)},
                      {"mf", nullable(m.mf)},
                      {"warnings", m.warnings}});
  }
  const auto& mean = report.mean;
  return {{"images", images},
          {"mean",
           {{"dice", mean.dice},
            {"jaccard", mean.jaccard},
            {"hd", nullable(mean.hd)},
            {"mf", nullable(mean.mf)},
            {"images", mean.images},
            {"hd_images", mean.hd_images},
            {"mf_images", mean.mf_images}}},
          {"protocol",
           {{"mf_tolerance", protocol.mf_tolerance},
            {"mf_thresholds", protocol.mf_thresholds},
            {"trimap_widths", protocol.trimap_widths},
            {"prediction_threshold", 0.5}}}};
}

inline std::string csv_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg = base_config(args.config);
  if (args.mf_tolerance) cfg.protocol.mf_tolerance = *args.mf_tolerance;
  cfg.validate();
  for (const auto& dir : {args.pred, args.gt}) {
    if (!fs::is_directory(dir)) {
      err << "error: directory " << dir << " does not exist\n";
      return kBadInput;
    }
  }

  std::map<std::string, fs::path> preds;
  for (const auto* ext : {".png", ".fmap"}) {
    for (const auto& p : list_files(args.pred, ext)) {
      if (!preds.emplace(p.stem().string(), p).second) {
        err << "error: prediction '" << p.stem().string() << "' exists as both .png and .fmap\n";
        return kBadInput;
      }
    }
  }
  std::map<std::string, fs::path> gts;
  for (const auto& p : list_files(args.gt, ".png")) gts.emplace(p.stem().string(), p);

  std::vector<std::string> only_pred, only_gt;
  for (const auto& [k, _] : preds) {
    if (!gts.count(k)) only_pred.push_back(k);
  }
  for (const auto& [k, _] : gts) {
    if (!preds.count(k)) only_gt.push_back(k);
  }
  if (!only_pred.empty() || !only_gt.empty() || gts.empty()) {
    err << "error: prediction and ground-truth file names differ\n";
    for (const auto& k : only_pred) err << "  only in " << args.pred << ": " << k << "\n";
    for (const auto& k : only_gt) err << "  only in " << args.gt << ": " << k << "\n";
    if (gts.empty() && preds.empty()) err << "  no images found\n";
    return kBadInput;
  }

  std::vector<ImageMetrics> rows;
  for (const auto& [name, gt_path] : gts) {
    const auto& pred_path = preds.at(name);
    try {
      const auto gt = read_mask_png(gt_path.string());
      ImageGrid<double> prob;
      if (pred_path.extension() == ".fmap") {
        const auto fm = read_fmap(pred_path.string());
        if (fm.channels > 2) throw FormatError(pred_path.string() + ": expected 1 or 2 channels");
        prob = fm.channel(fm.channels == 2 ? 1 : 0);
      } else {
        prob = as_probability(read_mask_png(pred_path.string()));
      }
      if (!prob.same_shape(gt.grid())) {
        throw ShapeMismatch(name + ": prediction is " + std::to_string(prob.width()) + "x" +
                            std::to_string(prob.height()) + ", ground truth " + std::to_string(gt.width()) + "x" +
                            std::to_string(gt.height()));
      }
      auto m = evaluate_image(name, prob, gt, cfg.protocol, args.trimap.has_value());
      for (const auto& w : m.warnings) err << "warning: " << name << ": " << w << "\n";
      rows.push_back(std::move(m));
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return kBadInput;
    }
  }
  const auto report = aggregate(std::move(rows));

  std::ofstream(args.report) << report_to_json(report, cfg.protocol).dump(2) << "\n";
  if (args.csv) {
    std::ofstream csv(*args.csv);
    csv << "name,dice,jaccard,hd,mf\n";
    for (const auto& m : report.images) {
      csv << m.name << "," << format_double(m.dice) << "," << format_double(m.jaccard) << "," << csv_cell(m.hd)
          << "," << csv_cell(m.mf) << "\n";
    }
    csv << "mean," << format_double(report.mean.dice) << "," << format_double(report.mean.jaccard) << ","
        << csv_cell(report.mean.hd) << "," << csv_cell(report.mean.mf) << "\n";
  }
  if (args.trimap) {
    std::ofstream csv(*args.trimap);
    csv << "width,error,band_size\n";
    if (report.trimap) {
      const auto& t = *report.trimap;
      for (std::size_t k = 0; k < t.widths.size(); ++k) {
        csv << t.widths[k] << "," << format_double(t.errors[k]) << "," << t.band_sizes[k] << "\n";
      }
    }
  }
  out << "images: " << report.mean.images << "\n"
      << "dice: " << format_double(report.mean.dice) << "\n"
      << "jaccard: " << format_double(report.mean.jaccard) << "\n"
      << "hd: " << csv_cell(report.mean.hd) << "\n"
      << "mf: " << csv_cell(report.mean.mf) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train-demo

struct TrainDemoArgs {
  int iters = 500;
  std::optional<std::uint64_t> seed;  // falls back to the config seed
  std::string out;
  std::optional<std::string> variant;
  std::optional<std::string> distance;
  std::optional<std::string> config;
  double lr = 1e-3;
  int size = 64;
};

struct TrainDemoOutcome {
  double train_dice = 0.0;    // mean over the 4 training images
  double heldout_dice = 0.0;  // mean over the 2 held-out images
};

inline constexpr int kDemoTrainImages = 4;
inline constexpr int kDemoHeldoutImages = 2;

inline std::uint64_t heldout_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL; }

inline double mean_dice(const ag::ToyNet& net, const std::vector<Sample>& data) {
  double sum = 0.0;
  for (const auto& s : data) sum += dice_jaccard(predict_mask(net, s.image), s.targets.mask).dice;
  return sum / static_cast<double>(data.size());
}

inline void write_parameters(const fs::path& dir, const ag::ToyNet& net) {
  FloatMap fm;
  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto& p : net.parameters()) {
    for (double v : p.tensor.value()) fm.data.push_back(static_cast<float>(v));
    manifest.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += p.tensor.size();
  }
  fm.channels = 1;
  fm.width = static_cast<std::uint32_t>(fm.data.size());
  fm.height = 1;
  write_fmap((dir / "params.fmap").string(), fm);
  json header = {{"format", "FMAP"},
                 {"dtype", "float32"},
                 {"count", offset},
                 {"variant", std::string(to_string(net.config().variant))},
                 {"features", net.config().features},
                 {"bottleneck", net.config().bottleneck},
                 {"parameters", manifest}};
  std::ofstream(dir / "params.json") << header.dump(2) << "\n";
}

inline int cmd_train_demo(const TrainDemoArgs& args, std::ostream& out, std::ostream& err,
                          TrainDemoOutcome* outcome = nullptr) {
  RunConfig cfg = base_config(args.config);
  if (args.variant) cfg.variant = parse_variant(*args.variant);
  if (args.distance) cfg.distance = parse_distance_kind(*args.distance);
  if (args.iters < 0) {
    err << "error: --iters must be >= 0\n";
    return kUsage;
  }
  const std::uint64_t seed = args.seed.value_or(cfg.seed);
  const auto train = synthetic_dataset(kDemoTrainImages, args.size, seed, cfg.distance, cfg.radius);
  const auto heldout = synthetic_dataset(kDemoHeldoutImages, args.size, heldout_seed(seed), cfg.distance,
                                         cfg.radius);
  TrainOptions opt;
  opt.epochs = args.iters;
  opt.lr = args.lr;
  opt.seed = seed;
  opt.variant = cfg.variant;
  opt.weights = cfg.weights;

  fs::create_directories(args.out);
  TrainResult result{{}, ag::ToyNet(ag::ToyNetConfig{}, 0)};
  try {
    result = train_toy(train, opt);
  } catch (const DivergenceDetected& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  }

  {
    std::ofstream csv(fs::path(args.out) / "loss_trace.csv");
    csv << "epoch,total,mask,contour,distance\n";
    for (const auto& r : result.trace) {
      csv << r.epoch << "," << format_double(r.loss.total) << "," << format_double(r.loss.mask) << ","
          << format_double(r.loss.contour) << "," << format_double(r.loss.distance) << "\n";
    }
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    write_mask_png((fs::path(args.out) / ("train_" + std::to_string(i) + ".pred.png")).string(),
                   predict_mask(result.net, train[i].image));
  }
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    write_mask_png((fs::path(args.out) / ("heldout_" + std::to_string(i) + ".pred.png")).string(),
                   predict_mask(result.net, heldout[i].image));
  }
  write_parameters(args.out, result.net);

  TrainDemoOutcome o{mean_dice(result.net, train), mean_dice(result.net, heldout)};
  out << "variant: " << to_string(cfg.variant) << "\n"
      << "final training dice: " << format_double(o.train_dice) << "\n"
      << "held-out dice: " << format_double(o.heldout_dice) << "\n";
  if (outcome) *outcome = o;
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::uint64_t seed = 0;
  bool inject_conv_fault = false;  // negative control
};

inline int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream&) {
  std::optional<ag::testing::ScopedConvBackwardFault> fault;
  if (args.inject_conv_fault) fault.emplace();
  const auto report = gradcheck_all(args.seed);
  for (const auto& e : report.entries) {
    char line[160];
    std::snprintf(line, sizeof line, "%-28s max_rel_error=%.3e  inputs=%zu  %s\n", e.name.c_str(), e.max_rel_error,
                  e.checked, e.passed ? "ok" : "FAIL");
    out << line;
  }
  out << (report.passed() ? "all gradients within " : "gradient check FAILED, tolerance ")
      << format_double(report.tolerance) << "\n";
  return report.passed() ? kOk : kGradcheckFailed;
}

// ---------------------------------------------------------------- entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Conv-MCD multi-task segmentation targets, metrics and toy training"};
  app.require_subcommand(1);

  TargetsArgs targets;
  auto* t = app.add_subcommand("targets", "Build contour and distance-map targets from mask PNGs");
  t->add_option("--masks", targets.masks, "Directory of 8-bit grayscale mask PNGs")->required();
  t->add_option("--out", targets.out, "Output directory")->required();
  t->add_option("--distance", targets.distance, "Distance map kind: d1, d2 or d3");
  t->add_option("--radius", targets.radius, "Contour dilation radius: AUTO or an integer");
  t->add_option("--config", targets.config, "Run config JSON");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate predictions against ground-truth masks");
  e->add_option("--pred", eval.pred, "Directory of predicted masks (.png) or probability maps (.fmap)")->required();
  e->add_option("--gt", eval.gt, "Directory of ground-truth mask PNGs")->required();
  e->add_option("--report", eval.report, "Output report JSON")->required();
  e->add_option("--csv", eval.csv, "Optional per-image CSV");
  e->add_option("--trimap", eval.trimap, "Optional pooled trimap curve CSV");
  e->add_option("--mf-tolerance", eval.mf_tolerance, "Boundary matching tolerance in pixels");
  e->add_option("--config", eval.config, "Run config JSON");

  TrainDemoArgs train;
  auto* d = app.add_subcommand("train-demo", "Train the toy network with a Conv-MCD head on synthetic shapes");
  d->add_option("--iters", train.iters, "Training epochs over the 4 synthetic images")->capture_default_str();
  d->add_option("--seed", train.seed, "Seed for data and initialisation (default: config seed, 0)");
  d->add_option("--out", train.out, "Output directory")->required();
  d->add_option("--variant", train.variant, "Head variant: mcd, mc or md");
  d->add_option("--distance", train.distance, "Distance map kind: d1, d2 or d3");
  d->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();
  d->add_option("--config", train.config, "Run config JSON");

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operator");
  g->add_option("--seed", grad.seed, "Seed for the random test points")->capture_default_str();
  g->add_flag("--inject-conv-fault", grad.inject_conv_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  }

  try {
    if (t->parsed()) return cmd_targets(targets, out, err);
    if (e->parsed()) return cmd_eval(eval, out, err);
    if (d->parsed()) return cmd_train_demo(train, out, err);
    if (g->parsed()) return cmd_gradcheck(grad, out, err);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace convmcd::cli

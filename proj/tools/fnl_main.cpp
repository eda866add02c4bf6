#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fnl/fileio.hpp"
#include "fnl/gradcheck.hpp"
#include "fnl/model.hpp"
#include "fnl/pipeline.hpp"
#include "fnl/synthetic.hpp"
#include "fnl/train.hpp"

// Command-line entry point. Exit codes: 0 success, 2 bad config or arguments,
// 1 runtime failure. All file outputs are written atomically; configuration
// and inputs are validated before any output file is created.

namespace {

namespace fs = std::filesystem;
using namespace fnl;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string outdir;
};

AppConfig resolve_config(const CommonArgs& args) {
  AppConfig cfg;
  if (!args.config_path.empty()) cfg = load_config_file(args.config_path);
  for (const auto& o : args.overrides) apply_override(cfg, o);
  return cfg;
}

ClipManifest require_manifest(const AppConfig& cfg) {
  if (cfg.data.manifest.empty()) throw ConfigError("data.manifest is not set");
  if (!fs::exists(cfg.data.manifest))
    throw ConfigError("manifest '" + cfg.data.manifest + "' does not exist");
  return read_manifest(cfg.data.manifest);
}

void ensure_outdir(const std::string& outdir) {
  if (outdir.empty()) throw ConfigError("this command needs --out <dir>");
  fs::create_directories(outdir);
}

// Split a manifest by a fold plan: entries of fold `fold` vs the rest.
std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>> split_by_fold(
    const ClipManifest& manifest, const FoldPlan& plan, int fold) {
  if (fold < 0 || fold >= plan.k)
    throw ConfigError("--fold " + std::to_string(fold) + " out of range for k=" +
                      std::to_string(plan.k));
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest.entries) by_id[e.clip_id] = &e;
  std::vector<ManifestEntry> in_fold, rest;
  for (int f = 0; f < plan.k; ++f)
    for (const auto& id : plan.folds[f]) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ConfigError("fold plan references unknown clip '" + id + "'");
      (f == fold ? in_fold : rest).push_back(*it->second);
    }
  return {in_fold, rest};
}

std::string real_str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

int cmd_train(const CommonArgs& args, const std::string& folds_file, int fold) {
  AppConfig cfg = resolve_config(args);
  cfg.validate();
  const ClipManifest manifest = require_manifest(cfg);

  std::vector<ManifestEntry> train_split = manifest.entries;
  if (!folds_file.empty()) {
    const FoldPlan plan = read_fold_plan(folds_file);
    train_split = split_by_fold(manifest, plan, fold).second;
  } else if (fold >= 0) {
    throw ConfigError("--fold needs --folds-file");
  }
  if (train_split.empty()) throw ConfigError("training split is empty");

  ensure_outdir(args.outdir);
  Rng rng(cfg.train.seed);
  Model<float> model(cfg.model, rng);
  const NormStats stats = compute_norm_stats(train_split, cfg.data, cfg.model.input_mode);
  model.set_norm_stats(stats.mean, stats.std_dev);

  RunLog log = train_fold(model, train_split, cfg, rng);
  model.save_weights(args.outdir + "/checkpoint.fnl");
  write_runlog(args.outdir + "/runlog.txt", log);
  std::cout << "trained " << cfg.train.iterations << " iterations on " << train_split.size()
            << " clips\n"
            << "final loss " << real_str(log.losses.back()) << "\n"
            << "wall clock " << std::fixed << std::setprecision(2) << log.wall_clock_s << "s\n"
            << "checkpoint " << args.outdir << "/checkpoint.fnl\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& folds_file,
             int fold) {
  AppConfig cfg = resolve_config(args);
  cfg.validate();
  const ClipManifest manifest = require_manifest(cfg);
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint <path>");
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint '" + checkpoint + "' does not exist");

  std::vector<ManifestEntry> clips = manifest.entries;
  if (!folds_file.empty()) clips = split_by_fold(manifest, read_fold_plan(folds_file), fold).first;

  Rng rng(cfg.train.seed);
  Model<float> model(cfg.model, rng);
  model.load_weights(checkpoint);

  const EvalResult r = evaluate(model, clips, cfg);
  std::ostringstream table;
  table << "# clip_id p label pred\n";
  for (const auto& cp : r.predictions)
    table << cp.clip_id << " " << real_str(cp.p) << " " << cp.label << " " << cp.pred << "\n";
  table << "accuracy " << real_str(r.accuracy) << "\n";
  std::cout << table.str();
  if (!args.outdir.empty()) {
    ensure_outdir(args.outdir);
    atomic_write_file(args.outdir + "/predictions.txt", table.str());
  }
  return 0;
}

int cmd_crossval(const CommonArgs& args) {
  AppConfig cfg = resolve_config(args);
  cfg.validate();
  const ClipManifest manifest = require_manifest(cfg);
  ensure_outdir(args.outdir);

  const CrossvalResult r = cross_validate(manifest, cfg, args.outdir, true);
  write_fold_plan(args.outdir + "/folds.txt", r.plan);

  std::ostringstream out;
  out << "# fold accuracy\n";
  for (size_t i = 0; i < r.folds.size(); ++i)
    out << "fold " << i << " accuracy " << real_str(r.folds[i].accuracy) << "\n";
  out << "mean " << real_str(r.mean_accuracy) << "\n";
  out << "std " << real_str(r.std_accuracy) << "\n";
  out << "summary " << r.summary() << "\n";
  std::cout << out.str();
  atomic_write_file(args.outdir + "/summary.txt", out.str());
  return 0;
}

int cmd_count_params(const CommonArgs& args) {
  AppConfig cfg = resolve_config(args);
  cfg.model.validate();
  const ParamCounts c = plan_param_counts(cfg.model);
  std::cout << "# component parameters\n"
            << "backbone " << c.backbone << "\n"
            << "aggregator " << c.aggregator << "\n"
            << "batchnorm " << c.batchnorm << "\n"
            << "head " << c.head << "\n"
            << "total " << c.total() << "\n";
  return 0;
}

int cmd_gradcheck(const std::vector<std::string>& subjects, double eps, double threshold) {
  const auto reports = run_gradcheck_suite(subjects, eps);
  bool ok = true;
  std::cout << "# subject max_rel_err worst\n";
  for (const auto& [name, rep] : reports) {
    std::cout << name << " " << real_str(rep.max_rel_err) << " " << rep.worst << "\n";
    if (!(rep.max_rel_err <= threshold)) ok = false;
  }
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << " (threshold " << threshold << ")\n";
  return ok ? 0 : 1;
}

int cmd_make_folds(const CommonArgs& args) {
  AppConfig cfg = resolve_config(args);
  cfg.data.validate();
  const ClipManifest manifest = require_manifest(cfg);
  ensure_outdir(args.outdir);
  const FoldPlan plan = make_folds(manifest, cfg.data.folds, cfg.train.seed);
  write_fold_plan(args.outdir + "/folds.txt", plan);
  std::cout << "wrote " << args.outdir << "/folds.txt (k=" << plan.k << ", seed=" << plan.seed
            << ")\n";
  return 0;
}

int cmd_bench(const CommonArgs& args, int clips) {
  AppConfig cfg = resolve_config(args);
  cfg.model.validate();
  if (clips < 1) throw ConfigError("--clips must be >= 1");

  Rng rng(cfg.train.seed == 0 ? 1 : cfg.train.seed);
  Model<float> model(cfg.model, rng);
  model.set_mode(Mode::Eval);

  const int n = cfg.data.frames_per_clip;
  std::vector<std::vector<std::vector<Tensor<float>>>> batches(clips);
  for (int i = 0; i < clips; ++i) {
    auto frames = synth_clip(i % 2 == 0, n, cfg.model.input_size, rng);
    if (cfg.model.input_mode == InputMode::Diff) frames = frame_difference(frames);
    batches[i] = {frames};
  }

  // Warm-up pass, then timed passes.
  model.forward(batches[0]);
  const auto t0 = std::chrono::steady_clock::now();
  int64_t frames_done = 0;
  for (int i = 0; i < clips; ++i) {
    model.forward(batches[i]);
    frames_done += static_cast<int64_t>(batches[i][0].size());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "clips " << clips << "\n"
            << "frames " << frames_done << "\n"
            << "seconds " << std::fixed << std::setprecision(3) << secs << "\n"
            << "frames_per_second " << std::setprecision(2) << (frames_done / secs) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fnl: video clip classification with a convolutional-LSTM aggregator"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string folds_file, checkpoint;
  int fold = -1;
  std::vector<std::string> subjects;
  double eps = 1e-3, threshold = 1e-4;
  int bench_clips = 4;

  auto add_common = [&common](CLI::App* cmd, bool with_out = true) {
    cmd->add_option("-c,--config", common.config_path, "config file (ini-style sections)");
    cmd->add_option("-s,--set", common.overrides, "override, e.g. -s train.seed=7")
        ->take_all();
    if (with_out) cmd->add_option("-o,--out", common.outdir, "output directory");
  };

  auto* train = app.add_subcommand("train", "train one split, write checkpoint + runlog");
  add_common(train);
  train->add_option("--folds-file", folds_file, "fold plan; train on all folds but --fold");
  train->add_option("--fold", fold, "held-out fold index");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, report accuracy");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "weight archive to load")->required();
  eval->add_option("--folds-file", folds_file, "fold plan; evaluate only --fold");
  eval->add_option("--fold", fold, "fold index to evaluate");

  auto* crossval = app.add_subcommand("crossval", "k-fold cross validation protocol");
  add_common(crossval);

  auto* countp = app.add_subcommand("count-params", "parameter count per component");
  add_common(countp, false);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--subject", subjects, "subject names (default: all)")->take_all();
  gradcheck->add_option("--eps", eps, "finite-difference step");
  gradcheck->add_option("--threshold", threshold, "max relative error allowed");

  auto* makefolds = app.add_subcommand("make-folds", "write a stratified fold plan");
  add_common(makefolds);

  auto* bench = app.add_subcommand("bench", "eval-mode throughput on synthetic clips");
  add_common(bench, false);
  bench->add_option("--clips", bench_clips, "number of synthetic clips");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(common, folds_file, fold);
    if (eval->parsed()) return cmd_eval(common, checkpoint, folds_file, fold < 0 ? 0 : fold);
    if (crossval->parsed()) return cmd_crossval(common);
    if (countp->parsed()) return cmd_count_params(common);
    if (gradcheck->parsed()) return cmd_gradcheck(subjects, eps, threshold);
    if (makefolds->parsed()) return cmd_make_folds(common);
    if (bench->parsed()) return cmd_bench(common, bench_clips);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

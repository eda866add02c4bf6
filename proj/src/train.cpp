#include "fnl/train.hpp"

#include <chrono>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fnl/fileio.hpp"

namespace fnl {

namespace {

std::string real17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Endless seeded batch sampler: shuffled pass over the split, reshuffled when
// exhausted.
class BatchSampler {
 public:
  BatchSampler(int count, Rng& rng) : rng_(rng), order_(count) {
    for (int i = 0; i < count; ++i) order_[i] = i;
    pos_ = count;  // force shuffle on first draw
  }

  int next() {
    if (pos_ >= order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  Rng& rng_;
  std::vector<int> order_;
  size_t pos_ = 0;
};

void clip_gradients(ParamMap<float>& params, double threshold) {
  double sq = 0.0;
  for (auto& [name, ref] : params)
    for (int64_t i = 0; i < ref.grad->numel(); ++i)
      sq += static_cast<double>((*ref.grad)[i]) * (*ref.grad)[i];
  const double norm = std::sqrt(sq);
  if (norm <= threshold) return;
  const float scale = static_cast<float>(threshold / norm);
  for (auto& [name, ref] : params)
    for (int64_t i = 0; i < ref.grad->numel(); ++i) (*ref.grad)[i] *= scale;
}

}  // namespace

std::string runlog_text(const RunLog& log) {
  std::ostringstream out;
  out << "# fnl runlog\n";
  for (const auto& line : log.config_echo) out << "# cfg " << line << "\n";
  out << "# seed " << log.seed << "\n";
  for (size_t i = 0; i < log.losses.size(); ++i)
    out << i << " " << real17(log.losses[i]) << "\n";
  for (size_t i = 0; i < log.fold_accuracy.size(); ++i)
    out << "# fold_accuracy " << i << " " << real17(log.fold_accuracy[i]) << "\n";
  return out.str();
}

void write_runlog(const std::string& path, const RunLog& log) {
  atomic_write_file(path, runlog_text(log));
}

RunLog train_fold(Model<float>& model, const std::vector<ManifestEntry>& train_split,
                  const AppConfig& cfg, Rng& rng) {
  if (train_split.empty()) throw ArgumentError("train_fold: empty training split");
  const double t0 = now_seconds();

  RunLog log;
  log.config_echo = echo_config(cfg);
  log.seed = rng.seed();
  log.losses.reserve(cfg.train.iterations);

  const NormStats stats{model.norm_mean(), model.norm_std()};
  model.set_mode(Mode::Train);
  RmspropState opt(model.params());
  BatchSampler sampler(static_cast<int>(train_split.size()), rng);

  for (int it = 0; it < cfg.train.iterations; ++it) {
    std::vector<std::vector<Tensor<float>>> batch;
    std::vector<int> labels;
    batch.reserve(cfg.train.batch_size);
    for (int b = 0; b < cfg.train.batch_size; ++b) {
      const ManifestEntry& e = train_split[sampler.next()];
      batch.push_back(load_clip(e, cfg.data, cfg.model.input_mode, Mode::Train, stats, &rng));
      labels.push_back(e.label);
    }

    const std::vector<float> p = model.forward(batch);
    double loss = 0.0;
    std::vector<float> dp(p.size());
    for (size_t b = 0; b < p.size(); ++b) {
      const BceResult r = bce_loss(p[b], labels[b]);
      loss += r.loss;
      dp[b] = static_cast<float>(r.dloss_dp / p.size());
    }
    loss /= p.size();
    if (!std::isfinite(loss))
      throw TrainError("non-finite loss at iteration " + std::to_string(it));

    model.zero_grads();
    model.backward(dp);
    if (cfg.train.grad_clip > 0.0) clip_gradients(model.params(), cfg.train.grad_clip);
    opt.step(model.params(), cfg.train);
    log.losses.push_back(loss);
  }

  log.wall_clock_s = now_seconds() - t0;
  return log;
}

EvalResult evaluate(Model<float>& model, const std::vector<ManifestEntry>& clips,
                    const AppConfig& cfg) {
  if (clips.empty()) throw ArgumentError("evaluate: empty clip set");
  const NormStats stats{model.norm_mean(), model.norm_std()};
  const Mode prev = model.mode();
  model.set_mode(Mode::Eval);
  EvalResult r;
  int correct = 0;
  for (const auto& e : clips) {
    auto frames = load_clip(e, cfg.data, cfg.model.input_mode, Mode::Eval, stats, nullptr);
    const double p = forward_clip(model, frames);
    ClipPrediction cp;
    cp.clip_id = e.clip_id;
    cp.p = p;
    cp.label = e.label;
    cp.pred = p >= 0.5 ? 1 : 0;
    if (cp.pred == e.label) ++correct;
    r.predictions.push_back(std::move(cp));
  }
  r.accuracy = static_cast<double>(correct) / clips.size();
  model.set_mode(prev);
  return r;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

double population_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

std::string CrossvalResult::summary() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << mean_accuracy * 100.0 << "±"
     << std::setprecision(2) << std_accuracy * 100.0 << "%";
  return os.str();
}

CrossvalResult cross_validate(const ClipManifest& manifest, const AppConfig& cfg,
                              const std::string& outdir, bool verbose) {
  CrossvalResult result;
  result.plan = make_folds(manifest, cfg.data.folds, cfg.train.seed);

  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest.entries) by_id[e.clip_id] = &e;

  for (int fold = 0; fold < result.plan.k; ++fold) {
    std::vector<ManifestEntry> train_split, test_split;
    for (int f = 0; f < result.plan.k; ++f)
      for (const auto& id : result.plan.folds[f])
        (f == fold ? test_split : train_split).push_back(*by_id.at(id));

    const uint64_t fold_seed = cfg.train.seed + static_cast<uint64_t>(fold);
    Rng rng(fold_seed);
    Model<float> model(cfg.model, rng);
    const NormStats stats = compute_norm_stats(train_split, cfg.data, cfg.model.input_mode);
    model.set_norm_stats(stats.mean, stats.std_dev);

    FoldOutcome outcome;
    outcome.log = train_fold(model, train_split, cfg, rng);
    outcome.accuracy = evaluate(model, test_split, cfg).accuracy;
    outcome.log.fold_accuracy.push_back(outcome.accuracy);

    if (!outdir.empty()) {
      model.save_weights(outdir + "/checkpoint_fold" + std::to_string(fold) + ".fnl");
      write_runlog(outdir + "/runlog_fold" + std::to_string(fold) + ".txt", outcome.log);
    }
    if (verbose)
      std::cout << "fold " << fold << " accuracy " << outcome.accuracy << " ("
                << outcome.log.wall_clock_s << "s)\n";
    result.folds.push_back(std::move(outcome));
  }

  std::vector<double> acc;
  for (const auto& f : result.folds) acc.push_back(f.accuracy);
  result.mean_accuracy = mean_of(acc);
  result.std_accuracy = population_std(acc);
  return result;
}

}  // namespace fnl

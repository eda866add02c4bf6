#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fnl/config.hpp"
#include "fnl/model.hpp"
#include "fnl/pipeline.hpp"

namespace fnl {

struct BceResult {
  double loss;
  double dloss_dp;
};

/// Binary cross entropy -[y ln p + (1-y) ln(1-p)] with p clamped to
/// [eps, 1-eps], eps = 1e-7, before evaluation. The gradient is exact w.r.t.
/// p inside the clamp region.
inline BceResult bce_loss(double p, int y) {
  if (y != 0 && y != 1) throw ArgumentError("bce_loss: label must be 0 or 1");
  constexpr double eps = 1e-7;
  const double pc = p < eps ? eps : (p > 1.0 - eps ? 1.0 - eps : p);
  BceResult r;
  r.loss = -(y * std::log(pc) + (1 - y) * std::log(1.0 - pc));
  r.dloss_dp = (y == 1) ? -1.0 / pc : 1.0 / (1.0 - pc);
  return r;
}

/// accum' = decay * accum + (1-decay) * grad^2
/// param' = param - lr * grad / (sqrt(accum') + epsilon), elementwise.
template <typename T>
void rmsprop_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& accum, double lr,
                    double decay, double epsilon) {
  if (param.dims != grad.dims || param.dims != accum.dims)
    throw ShapeError("rmsprop_update: param/grad/accum dims mismatch");
  for (int64_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    const double a = decay * accum[i] + (1.0 - decay) * g * g;
    accum[i] = static_cast<T>(a);
    param[i] = static_cast<T>(param[i] - lr * g / (std::sqrt(a) + epsilon));
  }
}

/// Per-run trace. The serialized form contains only deterministic content
/// (config echo, seed, losses, fold accuracies); wall clock is reported on
/// stdout instead so identical runs produce byte-identical files.
struct RunLog {
  std::vector<std::string> config_echo;
  uint64_t seed = 0;
  std::vector<double> losses;
  std::vector<double> fold_accuracy;
  double wall_clock_s = 0.0;
};

std::string runlog_text(const RunLog& log);
void write_runlog(const std::string& path, const RunLog& log);

struct ClipPrediction {
  std::string clip_id;
  double p = 0.0;
  int label = 0;
  int pred = 0;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<ClipPrediction> predictions;
};

/// RMSprop optimizer state: one accumulator per named parameter.
class RmspropState {
 public:
  explicit RmspropState(ParamMap<float>& params) {
    for (auto& [name, ref] : params) accum_.emplace(name, Tensor<float>::zeros(ref.value->dims));
  }

  void step(ParamMap<float>& params, const TrainConfig& cfg) {
    for (auto& [name, ref] : params)
      rmsprop_update(*ref.value, *ref.grad, accum_.at(name), cfg.learning_rate,
                     cfg.rmsprop_decay, cfg.rmsprop_epsilon);
  }

 private:
  std::map<std::string, Tensor<float>> accum_;
};

/// Train on one split for cfg.train.iterations batch updates. Batches are
/// drawn from a seeded shuffle that reshuffles when exhausted; the loss is the
/// batch mean BCE. Aborts with TrainError naming the iteration if the loss
/// goes non-finite. Norm stats must already be set on the model.
RunLog train_fold(Model<float>& model, const std::vector<ManifestEntry>& train_split,
                  const AppConfig& cfg, Rng& rng);

/// Eval-mode accuracy with per-clip probabilities; prediction is p >= 0.5.
EvalResult evaluate(Model<float>& model, const std::vector<ManifestEntry>& clips,
                    const AppConfig& cfg);

struct FoldOutcome {
  double accuracy = 0.0;
  RunLog log;
};

struct CrossvalResult {
  FoldPlan plan;
  std::vector<FoldOutcome> folds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population std over folds

  /// "97.1±0.55%"-style summary line.
  std::string summary() const;
};

/// Full k-fold protocol: stratified folds, one freshly seeded model per fold
/// (seed = cfg.train.seed + fold), train on the rest, evaluate on the fold.
/// Writes per-fold checkpoints/runlogs into outdir when non-empty.
CrossvalResult cross_validate(const ClipManifest& manifest, const AppConfig& cfg,
                              const std::string& outdir, bool verbose);

double mean_of(const std::vector<double>& v);
double population_std(const std::vector<double>& v);

}  // namespace fnl

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fnl/archive.hpp"
#include "fnl/config.hpp"
#include "fnl/layers.hpp"
#include "fnl/recurrent.hpp"

// Model assembly. The backbone runs per frame, the aggregator folds the
// per-frame features over time, and the head maps the final hidden state to a
// probability: batchnorm -> (flatten) -> FC stack with ReLU between -> sigmoid.
//
// Every trainable tensor lives in a flat named store; names are stable across
// save/load and have one of the prefixes backbone. / agg. / post.bn. / head.
// model_plan() describes the same store declaratively, which gives an
// independent closed-form route for parameter counting.

namespace fnl {

enum class Component { Backbone, Aggregator, BatchNorm, Head, Pipeline };

struct TensorSpec {
  std::string name;
  std::vector<int> dims;
  Component component;
  bool trainable;
};

struct FeatureShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  int64_t flat() const { return static_cast<int64_t>(channels) * height * width; }
};

struct ParamCounts {
  int64_t backbone = 0;
  int64_t aggregator = 0;
  int64_t batchnorm = 0;
  int64_t head = 0;

  int64_t total() const { return backbone + aggregator + batchnorm + head; }
};

namespace arch {

struct ConvStage {
  const char* name;
  int cout, k, stride, pad;
  bool pool_after;
  int pool_k, pool_stride;
};

inline const std::vector<ConvStage>& conv_stages(Backbone b) {
  static const std::vector<ConvStage> alexnet = {
      {"conv1", 96, 11, 4, 2, true, 3, 2},  {"conv2", 256, 5, 1, 2, true, 3, 2},
      {"conv3", 384, 3, 1, 1, false, 0, 0}, {"conv4", 384, 3, 1, 1, false, 0, 0},
      {"conv5", 256, 3, 1, 1, true, 3, 2},
  };
  static const std::vector<ConvStage> tiny = {
      {"conv1", 8, 3, 1, 1, true, 2, 2},
      {"conv2", 16, 3, 1, 1, true, 2, 2},
  };
  return b == Backbone::AlexNetConv ? alexnet : tiny;
}

// The two FC layers in front of the LSTM aggregator.
constexpr int kLstmFcWidth = 4096;
// All ConvLSTM gate convolutions use 3x3 kernels, stride 1, same padding.
constexpr int kConvLstmKernel = 3;

}  // namespace arch

inline NormSlot conv_norm_at(const ModelConfig& cfg, size_t i) {
  if (cfg.conv_norms.empty()) return NormSlot::None;
  return cfg.conv_norms[i];
}

/// Spatial shape of the conv-stack output for this config's input size.
inline FeatureShape conv_stack_shape(const ModelConfig& cfg) {
  const auto& stages = arch::conv_stages(cfg.backbone);
  if (!cfg.conv_norms.empty() && cfg.conv_norms.size() != stages.size())
    throw ConfigError("model.conv_norms must list one slot per conv layer (" +
                      std::to_string(stages.size()) + ")");
  int c = 3, h = cfg.input_size, w = cfg.input_size;
  for (const auto& st : stages) {
    if (st.k > h + 2 * st.pad || st.k > w + 2 * st.pad)
      throw ConfigError("backbone kernel does not fit input; input_size too small");
    h = conv_out_extent(h, st.k, st.stride, st.pad);
    w = conv_out_extent(w, st.k, st.stride, st.pad);
    c = st.cout;
    if (st.pool_after) {
      if (st.pool_k > h || st.pool_k > w)
        throw ConfigError("backbone pool window does not fit; input_size too small");
      h = (h - st.pool_k) / st.pool_stride + 1;
      w = (w - st.pool_k) / st.pool_stride + 1;
    }
    if (h < 1 || w < 1) throw ConfigError("backbone output collapsed; input_size too small");
  }
  return {c, h, w};
}

/// Declarative list of every tensor the built model will hold, in the same
/// naming scheme as the live parameter store.
inline std::vector<TensorSpec> model_plan(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<TensorSpec> specs;
  const auto& stages = arch::conv_stages(cfg.backbone);
  const FeatureShape feat = conv_stack_shape(cfg);

  int cin = 3;
  for (size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    const std::string base = std::string("backbone.") + st.name;
    specs.push_back({base + ".w", {st.cout, cin, st.k, st.k}, Component::Backbone, true});
    specs.push_back({base + ".b", {st.cout}, Component::Backbone, true});
    if (conv_norm_at(cfg, i) == NormSlot::BatchNorm) {
      const std::string bn = "backbone.bn" + std::to_string(i + 1);
      specs.push_back({bn + ".gamma", {st.cout}, Component::Backbone, true});
      specs.push_back({bn + ".beta", {st.cout}, Component::Backbone, true});
      specs.push_back({bn + ".running_mean", {st.cout}, Component::Backbone, false});
      specs.push_back({bn + ".running_var", {st.cout}, Component::Backbone, false});
    }
    cin = st.cout;
  }

  int head_in = 0;
  int bn_channels = 0;
  if (cfg.aggregator == AggregatorKind::Lstm) {
    const int flat = static_cast<int>(feat.flat());
    specs.push_back({"backbone.fc6.w", {arch::kLstmFcWidth, flat}, Component::Backbone, true});
    specs.push_back({"backbone.fc6.b", {arch::kLstmFcWidth}, Component::Backbone, true});
    specs.push_back({"backbone.fc7.w", {arch::kLstmFcWidth, arch::kLstmFcWidth}, Component::Backbone, true});
    specs.push_back({"backbone.fc7.b", {arch::kLstmFcWidth}, Component::Backbone, true});
    const int u = cfg.width();
    specs.push_back({"agg.wx", {4 * u, arch::kLstmFcWidth}, Component::Aggregator, true});
    specs.push_back({"agg.wh", {4 * u, u}, Component::Aggregator, true});
    specs.push_back({"agg.b", {4 * u}, Component::Aggregator, true});
    head_in = u;
    bn_channels = u;
  } else {
    const int ch = cfg.width();
    const int k = arch::kConvLstmKernel;
    specs.push_back({"agg.wx", {4 * ch, feat.channels, k, k}, Component::Aggregator, true});
    specs.push_back({"agg.wh", {4 * ch, ch, k, k}, Component::Aggregator, true});
    specs.push_back({"agg.b", {4 * ch}, Component::Aggregator, true});
    head_in = ch * feat.height * feat.width;
    bn_channels = ch;
  }

  specs.push_back({"post.bn.gamma", {bn_channels}, Component::BatchNorm, true});
  specs.push_back({"post.bn.beta", {bn_channels}, Component::BatchNorm, true});
  specs.push_back({"post.bn.running_mean", {bn_channels}, Component::BatchNorm, false});
  specs.push_back({"post.bn.running_var", {bn_channels}, Component::BatchNorm, false});

  int prev = head_in;
  for (size_t i = 0; i < cfg.head.size(); ++i) {
    const std::string base = "head.fc" + std::to_string(i + 1);
    specs.push_back({base + ".w", {cfg.head[i], prev}, Component::Head, true});
    specs.push_back({base + ".b", {cfg.head[i]}, Component::Head, true});
    prev = cfg.head[i];
  }

  specs.push_back({"norm.mean", {1}, Component::Pipeline, false});
  specs.push_back({"norm.std", {1}, Component::Pipeline, false});
  return specs;
}

/// Closed-form parameter counts straight from the plan.
inline ParamCounts plan_param_counts(const ModelConfig& cfg) {
  ParamCounts c;
  for (const auto& s : model_plan(cfg)) {
    if (!s.trainable) continue;
    int64_t n = 1;
    for (int d : s.dims) n *= d;
    switch (s.component) {
      case Component::Backbone: c.backbone += n; break;
      case Component::Aggregator: c.aggregator += n; break;
      case Component::BatchNorm: c.batchnorm += n; break;
      case Component::Head: c.head += n; break;
      case Component::Pipeline: break;
    }
  }
  return c;
}

inline Component component_of(const std::string& name) {
  if (name.rfind("backbone.", 0) == 0) return Component::Backbone;
  if (name.rfind("agg.", 0) == 0) return Component::Aggregator;
  if (name.rfind("post.bn.", 0) == 0) return Component::BatchNorm;
  if (name.rfind("head.", 0) == 0) return Component::Head;
  return Component::Pipeline;
}

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    feat_ = conv_stack_shape(cfg_);
    const auto& stages = arch::conv_stages(cfg_.backbone);

    int cin = 3;
    for (size_t i = 0; i < stages.size(); ++i) {
      const auto& st = stages[i];
      backbone_.push_back(std::make_unique<Conv2dLayer<T>>(
          std::string("backbone.") + st.name, cin, st.cout, st.k, st.stride, st.pad, rng));
      if (conv_norm_at(cfg_, i) == NormSlot::BatchNorm)
        backbone_.push_back(std::make_unique<BatchNormLayer<T>>(
            "backbone.bn" + std::to_string(i + 1), st.cout));
      backbone_.push_back(std::make_unique<ReluLayer<T>>("backbone.relu" + std::to_string(i + 1)));
      if (st.pool_after)
        backbone_.push_back(std::make_unique<MaxPoolLayer<T>>(
            std::string("backbone.pool") + std::to_string(i + 1), st.pool_k, st.pool_stride));
      cin = st.cout;
    }

    int head_in = 0;
    int bn_channels = 0;
    if (cfg_.aggregator == AggregatorKind::Lstm) {
      const int flat = static_cast<int>(feat_.flat());
      backbone_.push_back(std::make_unique<FlattenLayer<T>>("backbone.flatten"));
      backbone_.push_back(std::make_unique<FullyConnectedLayer<T>>("backbone.fc6", flat,
                                                                   arch::kLstmFcWidth, rng));
      backbone_.push_back(std::make_unique<ReluLayer<T>>("backbone.relu6"));
      backbone_.push_back(std::make_unique<FullyConnectedLayer<T>>(
          "backbone.fc7", arch::kLstmFcWidth, arch::kLstmFcWidth, rng));
      backbone_.push_back(std::make_unique<ReluLayer<T>>("backbone.relu7"));
      lstm_ = LstmParams<T>(arch::kLstmFcWidth, cfg_.width(), rng);
      lstm_grads_ = std::make_unique<LstmGrads<T>>(lstm_);
      head_in = cfg_.width();
      bn_channels = cfg_.width();
    } else {
      clstm_ = ConvLstmParams<T>(feat_.channels, cfg_.width(), arch::kConvLstmKernel, rng);
      clstm_grads_ = std::make_unique<ConvLstmGrads<T>>(clstm_);
      head_in = cfg_.width() * feat_.height * feat_.width;
      bn_channels = cfg_.width();
    }

    head_.push_back(std::make_unique<BatchNormLayer<T>>("post.bn", bn_channels));
    if (cfg_.aggregator == AggregatorKind::ConvLstm)
      head_.push_back(std::make_unique<FlattenLayer<T>>("post.flatten"));
    int prev = head_in;
    for (size_t i = 0; i < cfg_.head.size(); ++i) {
      head_.push_back(std::make_unique<FullyConnectedLayer<T>>(
          "head.fc" + std::to_string(i + 1), prev, cfg_.head[i], rng));
      if (i + 1 < cfg_.head.size())
        head_.push_back(std::make_unique<ReluLayer<T>>("head.relu" + std::to_string(i + 1)));
      prev = cfg_.head[i];
    }
    head_.push_back(std::make_unique<SigmoidLayer<T>>("head.sigmoid"));

    norm_mean_ = Tensor<T>::zeros({1});
    norm_std_ = Tensor<T>::full({1}, T(1));

    for (auto& l : backbone_) l->collect(params_, buffers_);
    for (auto& l : head_) l->collect(params_, buffers_);
    if (cfg_.aggregator == AggregatorKind::Lstm) {
      params_["agg.wx"] = {&lstm_.wx, &lstm_grads_->wx};
      params_["agg.wh"] = {&lstm_.wh, &lstm_grads_->wh};
      params_["agg.b"] = {&lstm_.b, &lstm_grads_->b};
    } else {
      params_["agg.wx"] = {&clstm_.wx, &clstm_grads_->wx};
      params_["agg.wh"] = {&clstm_.wh, &clstm_grads_->wh};
      params_["agg.b"] = {&clstm_.b, &clstm_grads_->b};
    }
    buffers_["norm.mean"] = {&norm_mean_, nullptr};
    buffers_["norm.std"] = {&norm_std_, nullptr};

    set_mode(Mode::Train);

    if (cfg_.backbone_init.rfind("archive:", 0) == 0)
      load_weights(cfg_.backbone_init.substr(8));
  }

  /// Forward a batch of clips (same length, frames [3,S,S]). Returns one
  /// probability per clip, strictly in (0,1).
  std::vector<T> forward(const std::vector<std::vector<Tensor<T>>>& clips) {
    if (clips.empty()) throw ArgumentError("model forward: empty batch");
    batch_ = static_cast<int>(clips.size());
    steps_ = static_cast<int>(clips[0].size());
    if (steps_ == 0) throw ArgumentError("model forward: empty clip");
    const std::vector<int> frame_dims = {3, cfg_.input_size, cfg_.input_size};
    for (const auto& clip : clips) {
      if (static_cast<int>(clip.size()) != steps_)
        throw ShapeError("model forward: ragged clip lengths in batch");
      for (const auto& fr : clip)
        if (fr.dims != frame_dims)
          throw ShapeError("model forward: frame dims " + Tensor<T>::dims_str(fr.dims) +
                           ", expected " + Tensor<T>::dims_str(frame_dims));
    }

    Tensor<T> x({batch_ * steps_, 3, cfg_.input_size, cfg_.input_size});
    for (int i = 0; i < batch_; ++i)
      for (int j = 0; j < steps_; ++j) set_outer(x, i * steps_ + j, clips[i][j]);

    for (auto& l : backbone_) x = l->forward(x);

    const bool want_cache = (mode_ == Mode::Train);
    Tensor<T> agg;
    if (cfg_.aggregator == AggregatorKind::ConvLstm) {
      agg = Tensor<T>({batch_, cfg_.width(), feat_.height, feat_.width});
      clstm_caches_.assign(want_cache ? batch_ : 0, ConvLstmSeqCache<T>{});
      const auto init = convlstm_zero_state(clstm_, feat_.height, feat_.width);
      for (int i = 0; i < batch_; ++i) {
        std::vector<Tensor<T>> seq(steps_);
        for (int j = 0; j < steps_; ++j) seq[j] = slice_outer(x, i * steps_ + j);
        auto state = convlstm_sequence(seq, clstm_, init, want_cache ? &clstm_caches_[i] : nullptr);
        set_outer(agg, i, state.h);
      }
    } else {
      agg = Tensor<T>({batch_, cfg_.width()});
      lstm_caches_.assign(want_cache ? batch_ : 0, LstmSeqCache<T>{});
      const auto init = lstm_zero_state(lstm_);
      for (int i = 0; i < batch_; ++i) {
        std::vector<Tensor<T>> seq(steps_);
        for (int j = 0; j < steps_; ++j) seq[j] = slice_outer(x, i * steps_ + j);
        auto state = lstm_sequence(seq, lstm_, init, want_cache ? &lstm_caches_[i] : nullptr);
        set_outer(agg, i, state.h);
      }
    }

    for (auto& l : head_) agg = l->forward(agg);

    std::vector<T> p(batch_);
    for (int i = 0; i < batch_; ++i) p[i] = agg[i];
    return p;
  }

  /// Backward from dloss/dp per clip. Accumulates parameter gradients and
  /// returns the gradients w.r.t. every input frame.
  std::vector<std::vector<Tensor<T>>> backward(const std::vector<T>& dloss_dp) {
    if (mode_ != Mode::Train) throw StateError("model backward: not in train mode");
    if (static_cast<int>(dloss_dp.size()) != batch_)
      throw ShapeError("model backward: gradient batch mismatch");
    if (batch_ == 0) throw StateError("model backward: called before forward");

    Tensor<T> gy({batch_, 1});
    for (int i = 0; i < batch_; ++i) gy[i] = dloss_dp[i];
    for (auto it = head_.rbegin(); it != head_.rend(); ++it) gy = (*it)->backward(gy);

    Tensor<T> gfeat;
    if (cfg_.aggregator == AggregatorKind::ConvLstm) {
      gfeat = Tensor<T>({batch_ * steps_, feat_.channels, feat_.height, feat_.width});
      for (int i = 0; i < batch_; ++i) {
        auto gin = convlstm_sequence_backward(slice_outer(gy, i), clstm_caches_[i], clstm_,
                                              *clstm_grads_);
        for (int j = 0; j < steps_; ++j) set_outer(gfeat, i * steps_ + j, gin[j]);
      }
    } else {
      gfeat = Tensor<T>({batch_ * steps_, arch::kLstmFcWidth});
      for (int i = 0; i < batch_; ++i) {
        auto gin = lstm_sequence_backward(slice_outer(gy, i), lstm_caches_[i], lstm_, *lstm_grads_);
        for (int j = 0; j < steps_; ++j) set_outer(gfeat, i * steps_ + j, gin[j]);
      }
    }

    for (auto it = backbone_.rbegin(); it != backbone_.rend(); ++it) gfeat = (*it)->backward(gfeat);

    std::vector<std::vector<Tensor<T>>> grads(batch_);
    for (int i = 0; i < batch_; ++i) {
      grads[i].resize(steps_);
      for (int j = 0; j < steps_; ++j) grads[i][j] = slice_outer(gfeat, i * steps_ + j);
    }
    return grads;
  }

  void set_mode(Mode m) {
    mode_ = m;
    for (auto& l : backbone_) l->set_mode(m);
    for (auto& l : head_) l->set_mode(m);
  }

  Mode mode() const { return mode_; }

  void zero_grads() {
    for (auto& l : backbone_) l->zero_grads();
    for (auto& l : head_) l->zero_grads();
    if (clstm_grads_) clstm_grads_->zero();
    if (lstm_grads_) lstm_grads_->zero();
  }

  ParamMap<T>& params() { return params_; }
  ParamMap<T>& buffers() { return buffers_; }
  const ModelConfig& config() const { return cfg_; }
  const FeatureShape& feature_shape() const { return feat_; }
  const ConvLstmParams<T>& convlstm() const { return clstm_; }
  const LstmParams<T>& lstm() const { return lstm_; }

  double norm_mean() const { return norm_mean_[0]; }
  double norm_std() const { return norm_std_[0]; }
  void set_norm_stats(double mean, double sd) {
    norm_mean_[0] = static_cast<T>(mean);
    norm_std_[0] = static_cast<T>(sd);
  }

  /// Exact trainable scalar count, from the live store.
  ParamCounts count_params() const {
    ParamCounts c;
    for (const auto& [name, ref] : params_) {
      const int64_t n = ref.value->numel();
      switch (component_of(name)) {
        case Component::Backbone: c.backbone += n; break;
        case Component::Aggregator: c.aggregator += n; break;
        case Component::BatchNorm: c.batchnorm += n; break;
        case Component::Head: c.head += n; break;
        case Component::Pipeline: break;
      }
    }
    return c;
  }

  void save_weights(const std::string& path) const {
    std::vector<ArchiveEntry> entries;
    auto push = [&entries](const std::string& name, const Tensor<T>& t) {
      ArchiveEntry e;
      e.name = name;
      e.dims = t.dims;
      e.data.resize(t.numel());
      for (int64_t i = 0; i < t.numel(); ++i) e.data[i] = static_cast<float>(t[i]);
      entries.push_back(std::move(e));
    };
    for (const auto& [name, ref] : params_) push(name, *ref.value);
    for (const auto& [name, ref] : buffers_) push(name, *ref.value);
    write_weight_archive(path, entries);
  }

  /// Load an archive into the store. Every archive entry must match a model
  /// tensor by name and dims; offenders are listed and nothing is modified.
  /// Tensors absent from the archive keep their current values, so a
  /// backbone-only archive initializes just the backbone.
  void load_weights(const std::string& path) {
    const auto entries = read_weight_archive(path);
    std::vector<std::string> offenders;
    std::vector<std::pair<Tensor<T>*, const ArchiveEntry*>> accepted;
    for (const auto& e : entries) {
      Tensor<T>* dst = nullptr;
      if (auto it = params_.find(e.name); it != params_.end()) dst = it->second.value;
      else if (auto bt = buffers_.find(e.name); bt != buffers_.end()) dst = bt->second.value;
      if (!dst) {
        offenders.push_back(e.name + " (no such tensor in model)");
        continue;
      }
      if (dst->dims != e.dims) {
        offenders.push_back(e.name + " (archive dims " + Tensor<float>::dims_str(e.dims) +
                            " vs model " + Tensor<float>::dims_str(dst->dims) + ")");
        continue;
      }
      accepted.emplace_back(dst, &e);
    }
    if (!offenders.empty()) {
      std::string msg = "archive '" + path + "' does not match model:";
      for (const auto& o : offenders) msg += "\n  " + o;
      throw LoadError(msg);
    }
    for (auto& [dst, e] : accepted)
      for (int64_t i = 0; i < dst->numel(); ++i) (*dst)[i] = static_cast<T>(e->data[i]);
  }

 private:
  ModelConfig cfg_;
  FeatureShape feat_;
  std::vector<std::unique_ptr<Layer<T>>> backbone_;
  std::vector<std::unique_ptr<Layer<T>>> head_;

  ConvLstmParams<T> clstm_;
  std::unique_ptr<ConvLstmGrads<T>> clstm_grads_;
  std::vector<ConvLstmSeqCache<T>> clstm_caches_;

  LstmParams<T> lstm_;
  std::unique_ptr<LstmGrads<T>> lstm_grads_;
  std::vector<LstmSeqCache<T>> lstm_caches_;

  Tensor<T> norm_mean_, norm_std_;
  ParamMap<T> params_, buffers_;
  Mode mode_ = Mode::Train;
  int batch_ = 0, steps_ = 0;
};

/// Single-clip convenience wrapper.
template <typename T>
T forward_clip(Model<T>& model, const std::vector<Tensor<T>>& frames) {
  return model.forward({frames})[0];
}

}  // namespace fnl

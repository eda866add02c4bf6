#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fnl/error.hpp"

namespace fnl {

enum class Backbone { AlexNetConv, TinyCnn };
enum class AggregatorKind { ConvLstm, Lstm };
enum class InputMode { Frames, Diff };
enum class NormSlot { None, BatchNorm };

std::string to_string(Backbone b);
std::string to_string(AggregatorKind a);
std::string to_string(InputMode m);
std::string to_string(NormSlot s);

/// Declarative architecture description.
struct ModelConfig {
  Backbone backbone = Backbone::AlexNetConv;
  AggregatorKind aggregator = AggregatorKind::ConvLstm;
  int aggregator_width = 0;  // 0 resolves to 256 (convlstm) or 1000 (lstm)
  std::vector<int> head = {125, 1};
  InputMode input_mode = InputMode::Diff;
  std::string backbone_init = "xavier";  // "xavier" or "archive:<path>"
  std::vector<NormSlot> conv_norms;      // per conv position; empty = none everywhere
  int input_size = 224;                  // spatial size of the frames fed to the model

  int width() const {
    if (aggregator_width > 0) return aggregator_width;
    return aggregator == AggregatorKind::ConvLstm ? 256 : 1000;
  }

  void validate() const;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int iterations = 7500;
  double rmsprop_decay = 0.99;
  double rmsprop_epsilon = 1e-8;
  uint64_t seed = 0;
  double grad_clip = 0.0;  // global-norm clip threshold; <= 0 disables

  void validate() const;
};

struct DataConfig {
  std::string manifest;
  int frames_per_clip = 20;  // N equally spaced frames sampled per clip
  int resize_dim = 256;      // train-time resize before cropping
  int crop_dim = 224;        // model input size; eval resizes straight to this
  int folds = 5;

  void validate() const;
};

struct AppConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

/// Flat key-value config with [model] / [train] / [data] sections.
/// Unknown sections or keys are rejected, not ignored.
AppConfig parse_config_text(const std::string& text);
AppConfig load_config_file(const std::string& path);

/// Apply one "section.key=value" override on top of a parsed config.
void apply_override(AppConfig& cfg, const std::string& assignment);

/// Canonical, deterministic key=value echo of a resolved config.
std::vector<std::string> echo_config(const AppConfig& cfg);

}  // namespace fnl

#pragma once

#include <string>
#include <vector>

#include "fnl/config.hpp"
#include "fnl/mode.hpp"
#include "fnl/tensor.hpp"

// Dataset ingestion and preprocessing. A manifest indexes the clips; loading
// composes: sample N frames equally spaced in time -> resize -> (train-time
// crop + flip, one draw per clip) -> optional frame differencing -> global
// mean/std normalization. Differencing happens after the geometric transforms
// so train and eval see consistent inputs; the normalization statistics are
// global scalars computed over eval-geometry training inputs.

namespace fnl {

struct ManifestEntry {
  std::string clip_id;
  std::string path;  // directory of frame_%05d.ppm files
  int label = 0;     // 1 violent, 0 non-violent
  int frame_count = 0;
};

struct ClipManifest {
  std::vector<ManifestEntry> entries;
};

/// One record per line: clip_id path label frame_count ('#' comments allowed).
ClipManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const ClipManifest& manifest);

/// Indices of N frames equally spaced in time:
/// idx_i = floor(i * (frame_count-1) / (N-1)). Starts at 0, ends at
/// frame_count-1, non-decreasing.
std::vector<int> sample_indices(int frame_count, int n);

/// D_i = F_{i+1} - F_i, elementwise, signed. N frames -> N-1 differences.
std::vector<Tensor<float>> frame_difference(const std::vector<Tensor<float>>& frames);

struct NormStats {
  double mean = 0.0;
  double std_dev = 1.0;
};

enum class CropCorner { TopLeft, TopRight, BottomLeft, BottomRight, Center };

/// Top-left offset (row, col) of the crop window.
std::pair<int, int> crop_offset(CropCorner corner, int in_h, int in_w, int crop);

/// Apply the same crop window and flip decision to every frame of the clip.
std::vector<Tensor<float>> augment_clip(const std::vector<Tensor<float>>& frames, int crop,
                                        CropCorner corner, bool flip);

struct FoldPlan {
  int k = 0;
  uint64_t seed = 0;
  std::vector<std::vector<std::string>> folds;  // fold index -> clip ids
};

/// Stratified k-fold split: seeded shuffle within each class, round-robin
/// assignment. Folds are disjoint, cover all clips, and per-class counts
/// across folds differ by at most 1.
FoldPlan make_folds(const ClipManifest& manifest, int k, uint64_t seed);

void write_fold_plan(const std::string& path, const FoldPlan& plan);
FoldPlan read_fold_plan(const std::string& path);

/// Read the sampled frames of a clip, scaled to [0,1]. Missing or unreadable
/// frames raise IoError naming the clip.
std::vector<Tensor<float>> load_clip_frames(const ManifestEntry& entry, int n);

/// Full preprocessing to a model-ready input sequence. Train mode resizes to
/// resize_dim, draws one crop corner and flip per clip from rng, and crops to
/// crop_dim; eval mode resizes straight to crop_dim. rng may be null in eval.
std::vector<Tensor<float>> load_clip(const ManifestEntry& entry, const DataConfig& data,
                                     InputMode input_mode, Mode mode, const NormStats& stats,
                                     Rng* rng);

/// Global scalar mean/std over all model inputs of the training split
/// (differences when input_mode is diff), eval geometry. Degenerate variance
/// falls back to std 1 with a warning on stderr.
NormStats compute_norm_stats(const std::vector<ManifestEntry>& train_split,
                             const DataConfig& data, InputMode input_mode);

void apply_norm(std::vector<Tensor<float>>& frames, const NormStats& stats);

}  // namespace fnl

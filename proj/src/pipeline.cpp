#include "fnl/pipeline.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <sstream>

#include "fnl/fileio.hpp"
#include "fnl/image_io.hpp"
#include "fnl/kernels.hpp"

namespace fnl {

ClipManifest read_manifest(const std::string& path) {
  std::istringstream in(read_file(path));
  ClipManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.clip_id)) continue;  // blank line
    if (!(ls >> e.path >> e.label >> e.frame_count))
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) +
                        ": expected clip_id path label frame_count");
    if (e.label != 0 && e.label != 1)
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) +
                        ": label must be 0 or 1");
    if (e.frame_count < 2)
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) +
                        ": frame_count must be >= 2");
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw FormatError("manifest '" + path + "' has no entries");
  return m;
}

void write_manifest(const std::string& path, const ClipManifest& manifest) {
  std::ostringstream out;
  out << "# clip_id path label frame_count\n";
  for (const auto& e : manifest.entries)
    out << e.clip_id << " " << e.path << " " << e.label << " " << e.frame_count << "\n";
  atomic_write_file(path, out.str());
}

std::vector<int> sample_indices(int frame_count, int n) {
  if (n < 2) throw ArgumentError("sample_indices: N must be >= 2, got " + std::to_string(n));
  if (n > frame_count)
    throw ArgumentError("sample_indices: N=" + std::to_string(n) + " exceeds frame_count=" +
                        std::to_string(frame_count));
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i)
    idx[i] = static_cast<int>(static_cast<int64_t>(i) * (frame_count - 1) / (n - 1));
  return idx;
}

std::vector<Tensor<float>> frame_difference(const std::vector<Tensor<float>>& frames) {
  if (frames.size() < 2) throw ArgumentError("frame_difference: need at least 2 frames");
  std::vector<Tensor<float>> diffs;
  diffs.reserve(frames.size() - 1);
  for (size_t i = 0; i + 1 < frames.size(); ++i) diffs.push_back(sub(frames[i + 1], frames[i]));
  return diffs;
}

std::pair<int, int> crop_offset(CropCorner corner, int in_h, int in_w, int crop) {
  if (crop > in_h || crop > in_w)
    throw ArgumentError("crop " + std::to_string(crop) + " larger than input " +
                        std::to_string(in_h) + "x" + std::to_string(in_w));
  switch (corner) {
    case CropCorner::TopLeft: return {0, 0};
    case CropCorner::TopRight: return {0, in_w - crop};
    case CropCorner::BottomLeft: return {in_h - crop, 0};
    case CropCorner::BottomRight: return {in_h - crop, in_w - crop};
    case CropCorner::Center: return {(in_h - crop) / 2, (in_w - crop) / 2};
  }
  throw ArgumentError("bad crop corner");
}

namespace {

Tensor<float> crop_frame(const Tensor<float>& f, int r0, int c0, int crop, bool flip) {
  Tensor<float> out({f.dims[0], crop, crop});
  for (int c = 0; c < f.dims[0]; ++c)
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x) {
        const int sx = flip ? c0 + crop - 1 - x : c0 + x;
        out.at(c, y, x) = f.at(c, r0 + y, sx);
      }
  return out;
}

}  // namespace

std::vector<Tensor<float>> augment_clip(const std::vector<Tensor<float>>& frames, int crop,
                                        CropCorner corner, bool flip) {
  if (frames.empty()) throw ArgumentError("augment_clip: empty clip");
  const auto [r0, c0] = crop_offset(corner, frames[0].dims[1], frames[0].dims[2], crop);
  std::vector<Tensor<float>> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    if (f.dims != frames[0].dims) throw ShapeError("augment_clip: ragged frame dims");
    out.push_back(crop_frame(f, r0, c0, crop, flip));
  }
  return out;
}

FoldPlan make_folds(const ClipManifest& manifest, int k, uint64_t seed) {
  if (k < 2) throw ArgumentError("make_folds: k must be >= 2");
  std::vector<std::string> by_class[2];
  for (const auto& e : manifest.entries) by_class[e.label].push_back(e.clip_id);
  for (int cls = 0; cls < 2; ++cls)
    if (static_cast<int>(by_class[cls].size()) < k)
      throw ArgumentError("make_folds: class " + std::to_string(cls) + " has " +
                          std::to_string(by_class[cls].size()) + " clips, fewer than k=" +
                          std::to_string(k));

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.assign(k, {});
  Rng rng(seed);
  for (int cls = 0; cls < 2; ++cls) {
    rng.shuffle_items(by_class[cls]);
    for (size_t i = 0; i < by_class[cls].size(); ++i)
      plan.folds[i % k].push_back(by_class[cls][i]);
  }
  return plan;
}

void write_fold_plan(const std::string& path, const FoldPlan& plan) {
  std::ostringstream out;
  out << "# fold plan k=" << plan.k << " seed=" << plan.seed << "\n";
  for (int i = 0; i < plan.k; ++i) {
    out << "fold " << i << ":";
    for (const auto& id : plan.folds[i]) out << " " << id;
    out << "\n";
  }
  atomic_write_file(path, out.str());
}

FoldPlan read_fold_plan(const std::string& path) {
  std::istringstream in(read_file(path));
  FoldPlan plan;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# fold plan", 0) == 0) {
      const size_t kpos = line.find("k=");
      const size_t spos = line.find("seed=");
      if (kpos != std::string::npos) plan.k = std::stoi(line.substr(kpos + 2));
      if (spos != std::string::npos) plan.seed = std::stoull(line.substr(spos + 5));
      continue;
    }
    if (line.rfind("fold ", 0) != 0) continue;
    const size_t colon = line.find(':');
    if (colon == std::string::npos) throw FormatError("fold plan '" + path + "': missing ':'");
    std::istringstream ids(line.substr(colon + 1));
    std::vector<std::string> fold;
    std::string id;
    while (ids >> id) fold.push_back(id);
    plan.folds.push_back(std::move(fold));
  }
  if (plan.k == 0) plan.k = static_cast<int>(plan.folds.size());
  if (plan.folds.empty() || static_cast<int>(plan.folds.size()) != plan.k)
    throw FormatError("fold plan '" + path + "': fold count mismatch");
  return plan;
}

std::vector<Tensor<float>> load_clip_frames(const ManifestEntry& entry, int n) {
  const std::vector<int> idx = sample_indices(entry.frame_count, n);
  std::vector<Tensor<float>> frames;
  frames.reserve(idx.size());
  for (int i : idx) {
    const std::string path = entry.path + "/" + frame_filename(i);
    try {
      frames.push_back(read_ppm(path));
    } catch (const std::exception& ex) {
      throw IoError("clip '" + entry.clip_id + "': " + ex.what());
    }
    if (frames.back().dims != frames.front().dims)
      throw ShapeError("clip '" + entry.clip_id + "': frame dims vary within clip");
  }
  return frames;
}

void apply_norm(std::vector<Tensor<float>>& frames, const NormStats& stats) {
  const float mean = static_cast<float>(stats.mean);
  const float inv = static_cast<float>(1.0 / stats.std_dev);
  for (auto& f : frames)
    for (auto& v : f.data) v = (v - mean) * inv;
}

std::vector<Tensor<float>> load_clip(const ManifestEntry& entry, const DataConfig& data,
                                     InputMode input_mode, Mode mode, const NormStats& stats,
                                     Rng* rng) {
  std::vector<Tensor<float>> frames = load_clip_frames(entry, data.frames_per_clip);

  if (mode == Mode::Train) {
    if (!rng) throw ArgumentError("load_clip: train mode needs an rng");
    for (auto& f : frames) f = resize_bilinear(f, data.resize_dim, data.resize_dim);
    const auto corner = static_cast<CropCorner>(rng->below(5));
    const bool flip = rng->coin();
    frames = augment_clip(frames, data.crop_dim, corner, flip);
  } else {
    for (auto& f : frames) f = resize_bilinear(f, data.crop_dim, data.crop_dim);
  }

  if (input_mode == InputMode::Diff) frames = frame_difference(frames);
  apply_norm(frames, stats);
  return frames;
}

NormStats compute_norm_stats(const std::vector<ManifestEntry>& train_split,
                             const DataConfig& data, InputMode input_mode) {
  if (train_split.empty()) throw ArgumentError("compute_norm_stats: empty training split");
  double sum = 0.0, sumsq = 0.0;
  int64_t count = 0;
  const NormStats identity;
  for (const auto& e : train_split) {
    auto frames = load_clip(e, data, input_mode, Mode::Eval, identity, nullptr);
    for (const auto& f : frames)
      for (float v : f.data) {
        sum += v;
        sumsq += static_cast<double>(v) * v;
        ++count;
      }
  }
  NormStats s;
  s.mean = sum / count;
  const double var = sumsq / count - s.mean * s.mean;
  if (var <= 1e-12) {
    std::cerr << "warning: degenerate input variance, falling back to std=1\n";
    s.std_dev = 1.0;
  } else {
    s.std_dev = std::sqrt(var);
  }
  return s;
}

}  // namespace fnl

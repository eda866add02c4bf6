#include "fnl/synthetic.hpp"

#include <filesystem>

#include "fnl/image_io.hpp"

namespace fnl {

std::vector<Tensor<float>> synth_clip(bool moving, int frames, int size, Rng& rng) {
  if (frames < 2 || size < 8) throw ArgumentError("synth_clip: need frames >= 2, size >= 8");
  const int blob = size / 4;
  const int range = size - blob;
  // Start position and, for moving clips, a per-frame drift.
  double y = static_cast<double>(rng.below(static_cast<uint64_t>(range)));
  double x = static_cast<double>(rng.below(static_cast<uint64_t>(range)));
  double vy = 0.0, vx = 0.0;
  if (moving) {
    while (vy == 0.0 && vx == 0.0) {
      vy = static_cast<double>(static_cast<int>(rng.below(5)) - 2);
      vx = static_cast<double>(static_cast<int>(rng.below(5)) - 2);
    }
  }
  const float bg = 0.1f + 0.05f * static_cast<float>(rng.uniform());

  std::vector<Tensor<float>> clip;
  clip.reserve(frames);
  for (int t = 0; t < frames; ++t) {
    Tensor<float> f = Tensor<float>::full({3, size, size}, bg);
    const int by = static_cast<int>(y), bx = static_cast<int>(x);
    for (int c = 0; c < 3; ++c)
      for (int dy = 0; dy < blob; ++dy)
        for (int dx = 0; dx < blob; ++dx) f.at(c, by + dy, bx + dx) = 0.9f;
    clip.push_back(std::move(f));
    if (moving) {
      y += vy;
      x += vx;
      if (y < 0 || y > range - 1) {
        vy = -vy;
        y += 2 * vy;
      }
      if (x < 0 || x > range - 1) {
        vx = -vx;
        x += 2 * vx;
      }
    }
  }
  return clip;
}

ClipManifest write_synth_dataset(const std::string& dir, const SynthSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Rng rng(spec.seed);
  ClipManifest manifest;
  char idbuf[32];
  for (int i = 0; i < spec.clips; ++i) {
    const bool moving = (i % 2 == 0);
    std::snprintf(idbuf, sizeof(idbuf), "clip_%03d", i);
    const std::string clip_dir = dir + "/" + idbuf;
    fs::create_directories(clip_dir);
    const auto frames = synth_clip(moving, spec.frames, spec.size, rng);
    for (size_t t = 0; t < frames.size(); ++t)
      write_ppm(clip_dir + "/" + frame_filename(static_cast<int>(t)), frames[t]);
    ManifestEntry e;
    e.clip_id = idbuf;
    e.path = clip_dir;
    e.label = moving ? 1 : 0;
    e.frame_count = spec.frames;
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(dir + "/manifest.txt", manifest);
  return manifest;
}

}  // namespace fnl

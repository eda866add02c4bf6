#pragma once

#include <string>
#include <vector>

#include "fnl/pipeline.hpp"
#include "fnl/tensor.hpp"

namespace fnl {

// Synthetic clips for desk-scale experiments: a bright square blob on a dark
// background, either drifting across the frame (label 1) or held static
// (label 0). Separable by construction, especially in difference mode where
// static clips produce exactly zero inputs.

/// One clip of [3,size,size] frames in [0,1].
std::vector<Tensor<float>> synth_clip(bool moving, int frames, int size, Rng& rng);

struct SynthSpec {
  int clips = 20;   // half moving, half static
  int frames = 8;   // frames written per clip
  int size = 16;    // square frame size
  uint64_t seed = 7;
};

/// Write PPM frame directories plus a manifest under dir; returns the manifest.
/// The manifest file is written to dir + "/manifest.txt".
ClipManifest write_synth_dataset(const std::string& dir, const SynthSpec& spec);

}  // namespace fnl

#pragma once

#include <string>

#include "fnl/tensor.hpp"

namespace fnl {

// Frames are pre-extracted 8-bit RGB images in binary PPM (P6, maxval 255),
// one directory per clip, named frame_00000.ppm onward.

std::string frame_filename(int index);

/// Read a P6 PPM into a [3,H,W] tensor scaled to [0,1].
Tensor<float> read_ppm(const std::string& path);

/// Write a [3,H,W] tensor as P6 PPM; values are clamped to [0,1] and
/// quantized to 8 bits. Atomic (temp file + rename).
void write_ppm(const std::string& path, const Tensor<float>& img);

}  // namespace fnl

#pragma once

#include <string>
#include <vector>

#include "fnl/tensor.hpp"

namespace fnl {

// Weight archive, a little-endian binary container for named float32 tensors:
//
//   magic "FNL1"
//   entry count        u32
//   per entry:
//     name length      u16
//     name             UTF-8 bytes
//     rank             u8
//     dims             u32 each
//     data             raw float32, row-major
//
// Save then load reproduces every tensor bit-exactly.

struct ArchiveEntry {
  std::string name;
  std::vector<int> dims;
  std::vector<float> data;
};

std::string encode_weight_archive(const std::vector<ArchiveEntry>& entries);

/// Atomic write (temp file + rename).
void write_weight_archive(const std::string& path, const std::vector<ArchiveEntry>& entries);

/// Throws FormatError on bad magic, truncation or malformed entries.
std::vector<ArchiveEntry> read_weight_archive(const std::string& path);
std::vector<ArchiveEntry> decode_weight_archive(const std::string& bytes);

}  // namespace fnl

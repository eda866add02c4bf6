#include "fnl/archive.hpp"

#include <bit>
#include <cstring>

#include "fnl/error.hpp"
#include "fnl/fileio.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight archive I/O assumes a little-endian host");
static_assert(sizeof(float) == 4, "weight archive stores 32-bit floats");

namespace fnl {

namespace {

void put_u16(std::string& out, uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }
void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u8(std::string& out, uint8_t v) { out.append(reinterpret_cast<const char*>(&v), 1); }

struct Cursor {
  const char* p;
  size_t left;

  void need(size_t n, const char* what) {
    if (left < n) throw FormatError(std::string("weight archive truncated reading ") + what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    uint8_t v;
    std::memcpy(&v, p, 1);
    p += 1;
    left -= 1;
    return v;
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v;
    std::memcpy(&v, p, 2);
    p += 2;
    left -= 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    left -= 4;
    return v;
  }
};

}  // namespace

std::string encode_weight_archive(const std::vector<ArchiveEntry>& entries) {
  std::string out;
  out.append("FNL1", 4);
  put_u32(out, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw ArgumentError("archive entry name too long: " + e.name);
    if (e.dims.size() > 0xFF) throw ArgumentError("archive entry rank too large: " + e.name);
    int64_t n = 1;
    for (int d : e.dims) {
      if (d <= 0) throw ArgumentError("archive entry has non-positive dim: " + e.name);
      n *= d;
    }
    if (n != static_cast<int64_t>(e.data.size()))
      throw ArgumentError("archive entry data/dims mismatch: " + e.name);
    put_u16(out, static_cast<uint16_t>(e.name.size()));
    out.append(e.name);
    put_u8(out, static_cast<uint8_t>(e.dims.size()));
    for (int d : e.dims) put_u32(out, static_cast<uint32_t>(d));
    out.append(reinterpret_cast<const char*>(e.data.data()), e.data.size() * 4);
  }
  return out;
}

void write_weight_archive(const std::string& path, const std::vector<ArchiveEntry>& entries) {
  atomic_write_file(path, encode_weight_archive(entries));
}

std::vector<ArchiveEntry> decode_weight_archive(const std::string& bytes) {
  Cursor c{bytes.data(), bytes.size()};
  c.need(4, "magic");
  if (std::memcmp(c.p, "FNL1", 4) != 0) throw FormatError("weight archive has bad magic bytes");
  c.p += 4;
  c.left -= 4;
  const uint32_t count = c.u32("entry count");
  std::vector<ArchiveEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    const uint16_t name_len = c.u16("name length");
    c.need(name_len, "name");
    e.name.assign(c.p, name_len);
    c.p += name_len;
    c.left -= name_len;
    const uint8_t rank = c.u8("rank");
    int64_t n = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      const uint32_t dim = c.u32("dims");
      if (dim == 0) throw FormatError("weight archive entry '" + e.name + "' has zero dim");
      e.dims.push_back(static_cast<int>(dim));
      n *= dim;
    }
    c.need(static_cast<size_t>(n) * 4, "tensor data");
    e.data.resize(static_cast<size_t>(n));
    std::memcpy(e.data.data(), c.p, static_cast<size_t>(n) * 4);
    c.p += n * 4;
    c.left -= static_cast<size_t>(n) * 4;
    entries.push_back(std::move(e));
  }
  if (c.left != 0) throw FormatError("weight archive has trailing bytes");
  return entries;
}

std::vector<ArchiveEntry> read_weight_archive(const std::string& path) {
  return decode_weight_archive(read_file(path));
}

}  // namespace fnl

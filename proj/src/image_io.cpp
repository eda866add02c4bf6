#include "fnl/image_io.hpp"

#include <cctype>
#include <cstdio>

#include "fnl/error.hpp"
#include "fnl/fileio.hpp"

namespace fnl {

std::string frame_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05d.ppm", index);
  return buf;
}

namespace {

// PPM header token reader: skips whitespace and '#' comments.
int next_int(const std::string& s, size_t& pos, const std::string& path) {
  while (pos < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])))
    throw FormatError("malformed PPM header in '" + path + "'");
  int v = 0;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
    v = v * 10 + (s[pos] - '0');
    ++pos;
  }
  return v;
}

}  // namespace

Tensor<float> read_ppm(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw FormatError("'" + path + "' is not a P6 PPM");
  size_t pos = 2;
  const int w = next_int(bytes, pos, path);
  const int h = next_int(bytes, pos, path);
  const int maxval = next_int(bytes, pos, path);
  if (maxval != 255) throw FormatError("'" + path + "': only maxval 255 supported");
  ++pos;  // single whitespace after maxval
  const size_t need = static_cast<size_t>(w) * h * 3;
  if (bytes.size() - pos < need) throw FormatError("'" + path + "': pixel data truncated");

  Tensor<float> img({3, h, w});
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(p[(static_cast<size_t>(y) * w + x) * 3 + c]) / 255.0f;
  return img;
}

void write_ppm(const std::string& path, const Tensor<float>& img) {
  if (img.rank() != 3 || img.dims[0] != 3) throw ShapeError("write_ppm: expected [3,H,W]");
  const int h = img.dims[1], w = img.dims[2];
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        float v = img.at(c, y, x);
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        out.push_back(static_cast<char>(static_cast<unsigned char>(v * 255.0f + 0.5f)));
      }
    }
  }
  atomic_write_file(path, out);
}

}  // namespace fnl

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dis/vec.hpp"

namespace dis {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Planar-free interleaved float image, row-major, origin at top-left.
// Computation runs in double; files store float32.
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  size_t index(int x, int y, int c = 0) const {
    return (static_cast<size_t>(y) * width + x) * channels + c;
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  Vec3 rgb(int x, int y) const {
    size_t i = index(x, y, 0);
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set_rgb(int x, int y, const Vec3& v) {
    size_t i = index(x, y, 0);
    data[i] = v.x;
    data[i + 1] = v.y;
    data[i + 2] = v.z;
  }

  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// Boolean mask at image resolution.
struct Mask {
  int width = 0, height = 0;
  std::vector<uint8_t> bits;

  Mask() = default;
  Mask(int w, int h, bool fill = false)
      : width(w), height(h), bits(static_cast<size_t>(w) * h, fill ? 1 : 0) {}

  bool at(int x, int y) const { return bits[static_cast<size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<size_t>(y) * width + x] = v ? 1 : 0; }
  size_t count() const {
    size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
};

// ---------------------------------------------------------------------------
// PFM: float32 little-endian, authoritative lossless format.
// "PF" = 3 channel, "Pf" = 1 channel; negative scale marks little-endian.
// PFM rows are bottom-up; we flip on read/write so Image stays top-down.
// ---------------------------------------------------------------------------

inline void save_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("save_pfm: " + path + ": channels must be 1 or 3");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_pfm: cannot open " + path);
  f << (img.channels == 3 ? "PF" : "Pf") << "\n"
    << img.width << " " << img.height << "\n"
    << "-1.0\n";
  std::vector<float> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = img.height - 1; y >= 0; --y) {
    const double* src = &img.data[static_cast<size_t>(y) * img.width * img.channels];
    for (size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(src[i]);
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw IoError("save_pfm: write failed for " + path);
}

inline Image load_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_pfm: cannot open " + path);
  std::string magic;
  f >> magic;
  int channels;
  if (magic == "PF")
    channels = 3;
  else if (magic == "Pf")
    channels = 1;
  else
    throw IoError("load_pfm: " + path + ": bad magic at byte 0");
  int w, h;
  double scale;
  f >> w >> h >> scale;
  if (!f || w < 1 || h < 1) throw IoError("load_pfm: " + path + ": malformed header");
  if (scale >= 0) throw IoError("load_pfm: " + path + ": big-endian PFM unsupported");
  f.get();  // single whitespace after scale
  Image img(w, h, channels);
  std::vector<float> row(static_cast<size_t>(w) * channels);
  for (int y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!f)
      throw IoError("load_pfm: " + path + ": truncated at byte " +
                    std::to_string(static_cast<long long>(f.tellg())));
    double* dst = &img.data[static_cast<size_t>(y) * w * channels];
    for (size_t i = 0; i < row.size(); ++i) dst[i] = row[i];
  }
  return img;
}

// ---------------------------------------------------------------------------
// PNG: 8-bit preview only (gamma 2.2 for color, raw [0,1] for data maps).
// ---------------------------------------------------------------------------

// save_png/load_png live in dis/png_io.hpp (pulls in libpng).

inline Image linear_to_preview(const Image& img) {
  Image out = img;
  for (auto& v : out.data) v = std::pow(clamp(v, 0.0, 1.0), 1.0 / 2.2);
  return out;
}

// Normal map <-> color encoding n -> (n+1)/2.
inline Image encode_normal_map(const Image& normals) {
  Image out = normals;
  for (auto& v : out.data) v = (v + 1.0) * 0.5;
  return out;
}

inline Image decode_normal_map(const Image& encoded) {
  Image out = encoded;
  for (auto& v : out.data) v = v * 2.0 - 1.0;
  return out;
}

}  // namespace dis

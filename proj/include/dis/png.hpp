#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dis/image.hpp"
#include "dis/vec.hpp"

namespace dis {

// Minimal 8-bit PNG codec (gray or RGB, filter types 0-4 on read, 0 on
// write) backed by zlib. PNG output is a lossy preview format; PFM remains
// the authoritative float container. `gamma` = 2.2 applies display encoding
// on save and undoes it on load; `gamma` = 1.0 stores values verbatim
// (used for (n+1)/2 normal-map previews, quantization error <= 1/255).

namespace png_detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

inline void write_chunk(std::vector<uint8_t>& out, const char* type,
                        const std::vector<uint8_t>& payload) {
  put_u32(out, static_cast<uint32_t>(payload.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = ::crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, crc);
}

constexpr uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

inline int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

}  // namespace png_detail

inline void save_png(const std::string& path, const Image& img, double gamma = 2.2) {
  using namespace png_detail;
  if (img.channels != 1 && img.channels != 3)
    throw ArgumentError("save_png: only 1- or 3-channel images supported");
  int ch = img.channels;
  size_t stride = static_cast<size_t>(img.width) * ch;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  double inv_gamma = 1.0 / gamma;
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter type 0
    for (size_t i = 0; i < stride; ++i) {
      double v = clamp(img.data[static_cast<size_t>(y) * stride + i], 0.0, 1.0);
      if (gamma != 1.0) v = std::pow(v, inv_gamma);
      raw.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
    }
  }

  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("save_png: zlib compression failed");
  comp.resize(comp_size);

  std::vector<uint8_t> out(kSignature, kSignature + 8);
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(img.width));
  put_u32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                        // bit depth
  ihdr.push_back(ch == 3 ? 2 : 0);          // color type
  ihdr.push_back(0);                        // compression
  ihdr.push_back(0);                        // filter method
  ihdr.push_back(0);                        // interlace
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", comp);
  write_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("save_png: write failed for " + path);
}

inline Image load_png(const std::string& path, double gamma = 2.2) {
  using namespace png_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_png: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kSignature, 8) != 0)
    throw IoError("load_png: " + path + ": bad signature at byte 0");

  int width = 0, height = 0, ch = 0;
  std::vector<uint8_t> comp;
  size_t pos = 8;
  while (pos + 8 <= buf.size()) {
    uint32_t len = get_u32(buf.data() + pos);
    if (pos + 12 + len > buf.size())
      throw IoError("load_png: " + path + ": truncated chunk at byte " + std::to_string(pos));
    const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
    const uint8_t* payload = buf.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("load_png: " + path + ": malformed IHDR at byte " +
                                   std::to_string(pos));
      width = static_cast<int>(get_u32(payload));
      height = static_cast<int>(get_u32(payload + 4));
      if (payload[8] != 8 || (payload[9] != 0 && payload[9] != 2) || payload[12] != 0)
        throw IoError("load_png: " + path + ": unsupported format at byte " + std::to_string(pos));
      ch = payload[9] == 2 ? 3 : 1;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      comp.insert(comp.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0 || ch == 0)
    throw IoError("load_png: " + path + ": missing IHDR");

  size_t stride = static_cast<size_t>(width) * ch;
  std::vector<uint8_t> raw((stride + 1) * height);
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_size, comp.data(), static_cast<uLong>(comp.size())) != Z_OK ||
      raw_size != raw.size())
    throw IoError("load_png: " + path + ": zlib inflate failed");

  Image img(width, height, ch);
  std::vector<uint8_t> prev(stride, 0), cur(stride);
  for (int y = 0; y < height; ++y) {
    const uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
    uint8_t filter = row[0];
    for (size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<size_t>(ch) ? cur[i - ch] : 0;  // left
      int b = prev[i];                                         // up
      int c = i >= static_cast<size_t>(ch) ? prev[i - ch] : 0; // up-left
      int x = row[1 + i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += paeth(a, b, c); break;
        default:
          throw IoError("load_png: " + path + ": unknown filter type in row " + std::to_string(y));
      }
      cur[i] = static_cast<uint8_t>(x & 0xff);
    }
    for (size_t i = 0; i < stride; ++i) {
      double v = cur[i] / 255.0;
      if (gamma != 1.0) v = std::pow(v, gamma);
      img.data[static_cast<size_t>(y) * stride + i] = v;
    }
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace dis

#pragma once

#include <png.h>

#include <cstdio>
#include <memory>

#include "dis/image.hpp"

namespace dis {

inline void save_png(const std::string& path, const Image& img, bool gamma_encode = false) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("save_png: " + path + ": channels must be 1 or 3");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("save_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("save_png: libpng failure for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    const double* src = &img.data[static_cast<size_t>(y) * img.width * img.channels];
    for (size_t i = 0; i < row.size(); ++i) {
      double v = clamp(src[i], 0.0, 1.0);
      if (gamma_encode) v = std::pow(v, 1.0 / 2.2);
      row[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Image load_png(const std::string& path, bool gamma_decode = false) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("load_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("load_png: libpng failure for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  int w = static_cast<int>(png_get_image_width(png, info));
  int h = static_cast<int>(png_get_image_height(png, info));
  int c = static_cast<int>(png_get_channels(png, info));
  if (c != 1 && c != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("load_png: " + path + ": unsupported channel count");
  }
  Image img(w, h, c);
  std::vector<uint8_t> row(static_cast<size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    double* dst = &img.data[static_cast<size_t>(y) * w * c];
    for (size_t i = 0; i < row.size(); ++i) {
      double v = row[i] / 255.0;
      if (gamma_decode) v = std::pow(v, 2.2);
      dst[i] = v;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace dis

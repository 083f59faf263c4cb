#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dis/image.hpp"
#include "dis/mesh.hpp"
#include "dis/vec.hpp"

namespace dis {

// Learnable bilinear grid over [0,1]^2 texture space. Node (0,0) sits at
// uv=(0,0), node (W-1,H-1) at uv=(1,1). Optional per-frame residual grids add
// on top of the base grid before the range clamp.
struct UVField {
  int width = 0, height = 0, channels = 0;
  std::vector<double> values;  // base grid, row-major, W*H*C
  std::vector<std::vector<double>> frame_residuals;
  std::optional<std::pair<double, double>> range_clamp;

  size_t node_index(int ix, int iy, int c = 0) const {
    return (static_cast<size_t>(iy) * width + ix) * channels + c;
  }
  double& node(int ix, int iy, int c = 0) { return values[node_index(ix, iy, c)]; }
  double node(int ix, int iy, int c = 0) const { return values[node_index(ix, iy, c)]; }
  size_t parameter_count() const { return values.size(); }
  int frame_count() const { return static_cast<int>(frame_residuals.size()); }
};

inline UVField field_init(int width, int height, int channels,
                          const std::vector<double>& constant,
                          std::optional<std::pair<double, double>> clamp_range = {}) {
  if (width < 2 || height < 2) throw ArgumentError("field_init: resolution must be >= 2x2");
  if (static_cast<int>(constant.size()) != channels)
    throw ArgumentError("field_init: constant size != channels");
  UVField f;
  f.width = width;
  f.height = height;
  f.channels = channels;
  f.range_clamp = clamp_range;
  f.values.resize(static_cast<size_t>(width) * height * channels);
  for (int iy = 0; iy < height; ++iy)
    for (int ix = 0; ix < width; ++ix)
      for (int c = 0; c < channels; ++c) f.node(ix, iy, c) = constant[c];
  return f;
}

namespace detail {

struct BilinearStencil {
  int ix0, iy0, ix1, iy1;
  double w00, w10, w01, w11;
};

inline BilinearStencil bilinear_stencil(const UVField& f, Vec2 uv) {
  uv.x = clamp(uv.x, 0.0, 1.0);
  uv.y = clamp(uv.y, 0.0, 1.0);
  double gx = uv.x * (f.width - 1), gy = uv.y * (f.height - 1);
  int ix0 = std::min(static_cast<int>(gx), f.width - 2);
  int iy0 = std::min(static_cast<int>(gy), f.height - 2);
  double fx = gx - ix0, fy = gy - iy0;
  return {ix0, iy0, ix0 + 1, iy0 + 1, (1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
}

}  // namespace detail

// Bilinear query; uv outside [0,1]^2 clamps to the boundary; range clamp last.
inline std::vector<double> field_query(const UVField& f, Vec2 uv, int frame = -1) {
  if (!f.frame_residuals.empty() && frame >= f.frame_count())
    throw ArgumentError("field_query: frame index out of range");
  auto s = detail::bilinear_stencil(f, uv);
  std::vector<double> out(f.channels);
  auto gather = [&](const std::vector<double>& grid) {
    for (int c = 0; c < f.channels; ++c) {
      out[c] += s.w00 * grid[f.node_index(s.ix0, s.iy0, c)] +
                s.w10 * grid[f.node_index(s.ix1, s.iy0, c)] +
                s.w01 * grid[f.node_index(s.ix0, s.iy1, c)] +
                s.w11 * grid[f.node_index(s.ix1, s.iy1, c)];
    }
  };
  gather(f.values);
  if (!f.frame_residuals.empty() && frame >= 0) gather(f.frame_residuals[frame]);
  if (f.range_clamp) {
    for (auto& v : out) v = clamp(v, f.range_clamp->first, f.range_clamp->second);
  }
  return out;
}

// Gradient buffer matching a field's parameter layout.
struct FieldGradient {
  std::vector<double> base;
  std::vector<std::vector<double>> residuals;

  static FieldGradient zeros_like(const UVField& f) {
    FieldGradient g;
    g.base.assign(f.values.size(), 0.0);
    g.residuals.resize(f.frame_residuals.size());
    for (size_t i = 0; i < f.frame_residuals.size(); ++i)
      g.residuals[i].assign(f.frame_residuals[i].size(), 0.0);
    return g;
  }

  void add(const FieldGradient& o) {
    for (size_t i = 0; i < base.size(); ++i) base[i] += o.base[i];
    for (size_t r = 0; r < residuals.size(); ++r)
      for (size_t i = 0; i < residuals[r].size(); ++i) residuals[r][i] += o.residuals[r][i];
  }
};

// Adjoint of field_query. Each touched node receives grad_out[c] * bilinear
// weight; channels saturated by the range clamp receive zero.
inline void field_query_backward(const UVField& f, Vec2 uv, int frame,
                                 const std::vector<double>& grad_out, FieldGradient& grad) {
  if (!f.frame_residuals.empty() && frame >= f.frame_count())
    throw ArgumentError("field_query_backward: frame index out of range");
  if (static_cast<int>(grad_out.size()) != f.channels)
    throw ArgumentError("field_query_backward: grad_out size != channels");
  auto s = detail::bilinear_stencil(f, uv);
  std::vector<char> saturated(f.channels, 0);
  if (f.range_clamp) {
    // pre-clamp output decides saturation
    for (int c = 0; c < f.channels; ++c) {
      double pre = s.w00 * f.values[f.node_index(s.ix0, s.iy0, c)] +
                   s.w10 * f.values[f.node_index(s.ix1, s.iy0, c)] +
                   s.w01 * f.values[f.node_index(s.ix0, s.iy1, c)] +
                   s.w11 * f.values[f.node_index(s.ix1, s.iy1, c)];
      if (!f.frame_residuals.empty() && frame >= 0) {
        const auto& r = f.frame_residuals[frame];
        pre += s.w00 * r[f.node_index(s.ix0, s.iy0, c)] +
               s.w10 * r[f.node_index(s.ix1, s.iy0, c)] +
               s.w01 * r[f.node_index(s.ix0, s.iy1, c)] +
               s.w11 * r[f.node_index(s.ix1, s.iy1, c)];
      }
      if (pre < f.range_clamp->first || pre > f.range_clamp->second) saturated[c] = 1;
    }
  }
  auto scatter = [&](std::vector<double>& grid) {
    for (int c = 0; c < f.channels; ++c) {
      if (saturated[c]) continue;
      double g = grad_out[c];
      grid[f.node_index(s.ix0, s.iy0, c)] += s.w00 * g;
      grid[f.node_index(s.ix1, s.iy0, c)] += s.w10 * g;
      grid[f.node_index(s.ix0, s.iy1, c)] += s.w01 * g;
      grid[f.node_index(s.ix1, s.iy1, c)] += s.w11 * g;
    }
  };
  scatter(grad.base);
  if (!f.frame_residuals.empty() && frame >= 0) scatter(grad.residuals[frame]);
}

// ---------------------------------------------------------------------------
// Field container: magic, dimensions, clamp range, float32 node data.
// ---------------------------------------------------------------------------

inline void save_field(const std::string& path, const UVField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_field: cannot open " + path);
  const char magic[8] = {'D', 'I', 'S', 'F', 'L', 'D', '0', '1'};
  out.write(magic, 8);
  int32_t header[4] = {f.width, f.height, f.channels, f.frame_count()};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  uint8_t has_clamp = f.range_clamp ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&has_clamp), 1);
  float clamp_range[2] = {0, 0};
  if (f.range_clamp) {
    clamp_range[0] = static_cast<float>(f.range_clamp->first);
    clamp_range[1] = static_cast<float>(f.range_clamp->second);
  }
  out.write(reinterpret_cast<const char*>(clamp_range), sizeof(clamp_range));
  auto write_grid = [&](const std::vector<double>& grid) {
    std::vector<float> buf(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) buf[i] = static_cast<float>(grid[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  };
  write_grid(f.values);
  for (const auto& r : f.frame_residuals) write_grid(r);
  if (!out) throw IoError("save_field: write failed for " + path);
}

inline UVField load_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_field: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "DISFLD01", 8) != 0)
    throw IoError("load_field: " + path + ": bad magic at byte 0");
  int32_t header[4];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || header[0] < 2 || header[1] < 2 || header[2] < 1 || header[3] < 0)
    throw IoError("load_field: " + path + ": malformed header at byte 8");
  UVField f;
  f.width = header[0];
  f.height = header[1];
  f.channels = header[2];
  uint8_t has_clamp;
  in.read(reinterpret_cast<char*>(&has_clamp), 1);
  float clamp_range[2];
  in.read(reinterpret_cast<char*>(clamp_range), sizeof(clamp_range));
  if (has_clamp) f.range_clamp = {clamp_range[0], clamp_range[1]};
  size_t n = static_cast<size_t>(f.width) * f.height * f.channels;
  auto read_grid = [&](std::vector<double>& grid) {
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!in)
      throw IoError("load_field: " + path + ": truncated at byte " +
                    std::to_string(static_cast<long long>(in.tellg())));
    grid.resize(n);
    for (size_t i = 0; i < n; ++i) grid[i] = buf[i];
  };
  read_grid(f.values);
  f.frame_residuals.resize(header[3]);
  for (auto& r : f.frame_residuals) read_grid(r);
  return f;
}

// One lossless float image per channel, for inspection.
inline Image field_channel_image(const UVField& f, int channel) {
  if (channel < 0 || channel >= f.channels) throw ArgumentError("field_channel_image: bad channel");
  Image img(f.width, f.height, 1);
  for (int iy = 0; iy < f.height; ++iy)
    for (int ix = 0; ix < f.width; ++ix) img.at(ix, iy) = f.node(ix, iy, channel);
  return img;
}

}  // namespace dis

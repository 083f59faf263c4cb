#pragma once

#include <cmath>

#include "dis/image.hpp"
#include "dis/losses.hpp"

namespace dis {

constexpr double kPsnrCap = 99.0;

// PSNR = 10 log10(1/MSE) over masked pixels, capped at 99 dB for MSE < 1e-10.
inline double metric_psnr(const Image& pred, const Image& target, const Mask& mask) {
  double mse = loss_mse(pred, target, mask).value;
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// Mean angular error in degrees between two unit-normal maps over a mask.
inline double metric_normal_degree(const Image& pred_normals, const Image& target_normals,
                                   const Mask& mask) {
  if (!pred_normals.same_shape(target_normals) || pred_normals.channels != 3)
    throw ArgumentError("metric_normal_degree: shape mismatch or non-3-channel input");
  double sum = 0;
  size_t n = 0;
  for (int y = 0; y < pred_normals.height; ++y)
    for (int x = 0; x < pred_normals.width; ++x) {
      if (!mask.at(x, y)) continue;
      Vec3 a = pred_normals.rgb(x, y), b = target_normals.rgb(x, y);
      double la = length(a), lb = length(b);
      if (la < 1e-12 || lb < 1e-12)
        throw ArgumentError("metric_normal_degree: zero-norm normal on mask");
      sum += rad_to_deg(std::acos(clamp(dot(a, b) / (la * lb), -1.0, 1.0)));
      ++n;
    }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

struct ScaleAlignedResult {
  Vec3 scale{1, 1, 1};
  double psnr = 0;
};

// Least-squares per-channel scale s_c = <pred,target>/<pred,pred> applied to
// pred before PSNR; resolves the global albedo/light scale ambiguity.
inline ScaleAlignedResult metric_scale_aligned(const Image& pred, const Image& target,
                                               const Mask& mask) {
  if (!pred.same_shape(target) || pred.channels != 3)
    throw ArgumentError("metric_scale_aligned: shape mismatch or non-3-channel input");
  Vec3 num{0, 0, 0}, den{0, 0, 0};
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      if (!mask.at(x, y)) continue;
      Vec3 p = pred.rgb(x, y), t = target.rgb(x, y);
      num += p * t;
      den += p * p;
    }
  ScaleAlignedResult r;
  r.scale = {den.x > 0 ? num.x / den.x : 1.0, den.y > 0 ? num.y / den.y : 1.0,
             den.z > 0 ? num.z / den.z : 1.0};
  Image scaled = pred;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) scaled.set_rgb(x, y, scaled.rgb(x, y) * r.scale);
  r.psnr = metric_psnr(scaled, target, mask);
  return r;
}

}  // namespace dis

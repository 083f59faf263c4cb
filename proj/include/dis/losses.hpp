#pragma once

#include <cmath>
#include <vector>

#include "dis/image.hpp"
#include "dis/mesh.hpp"

namespace dis {

struct LossResult {
  double value = 0;
  Image grad_pred;  // d(value)/d(pred), same shape as pred
};

// Mean over masked pixels and channels of (pred - target)^2.
// An empty mask yields 0 with a zero adjoint.
inline LossResult loss_mse(const Image& pred, const Image& target, const Mask& mask) {
  if (!pred.same_shape(target) || mask.width != pred.width || mask.height != pred.height)
    throw ArgumentError("loss_mse: shape mismatch");
  LossResult r;
  r.grad_pred = Image(pred.width, pred.height, pred.channels);
  size_t n = 0;
  double sum = 0;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      if (!mask.at(x, y)) continue;
      for (int c = 0; c < pred.channels; ++c) {
        double d = pred.at(x, y, c) - target.at(x, y, c);
        sum += d * d;
        ++n;
      }
    }
  if (n == 0) return r;
  r.value = sum / static_cast<double>(n);
  double scale = 2.0 / static_cast<double>(n);
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      if (!mask.at(x, y)) continue;
      for (int c = 0; c < pred.channels; ++c)
        r.grad_pred.at(x, y, c) = scale * (pred.at(x, y, c) - target.at(x, y, c));
    }
  return r;
}

namespace detail {

constexpr int kSsimRadius = 5;  // 11x11 window
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::vector<double>& ssim_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> w(11 * 11);
    double sum = 0;
    for (int dy = -kSsimRadius; dy <= kSsimRadius; ++dy)
      for (int dx = -kSsimRadius; dx <= kSsimRadius; ++dx) {
        double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSsimSigma * kSsimSigma));
        w[(dy + kSsimRadius) * 11 + (dx + kSsimRadius)] = v;
        sum += v;
      }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return k;
}

}  // namespace detail

// 1 - SSIM with the standard 11x11 Gaussian window (sigma 1.5, C1 = 0.01^2,
// C2 = 0.03^2), averaged per channel over windows fully inside the mask.
// The adjoint w.r.t. pred routes through the windowed moments exactly.
inline LossResult loss_ssim(const Image& pred, const Image& target, const Mask& mask) {
  if (!pred.same_shape(target) || mask.width != pred.width || mask.height != pred.height)
    throw ArgumentError("loss_ssim: shape mismatch");
  if (pred.width < 11 || pred.height < 11)
    throw ArgumentError("loss_ssim: image smaller than the 11x11 window");
  const auto& kernel = detail::ssim_kernel();
  const int R = detail::kSsimRadius;

  // valid window centers: the full 11x11 support is inside the image and mask
  Mask valid(pred.width, pred.height);
  size_t n_windows = 0;
  for (int y = R; y < pred.height - R; ++y)
    for (int x = R; x < pred.width - R; ++x) {
      bool ok = true;
      for (int dy = -R; dy <= R && ok; ++dy)
        for (int dx = -R; dx <= R && ok; ++dx) ok = mask.at(x + dx, y + dy);
      if (ok) {
        valid.set(x, y, true);
        ++n_windows;
      }
    }

  LossResult r;
  r.grad_pred = Image(pred.width, pred.height, pred.channels);
  if (n_windows == 0) return r;
  double inv_n = 1.0 / (static_cast<double>(n_windows) * pred.channels);

  // per-window partial coefficients w.r.t. the pred-side moments
  Image c_mean(pred.width, pred.height, pred.channels);
  Image c_e11(pred.width, pred.height, pred.channels);
  Image c_e12(pred.width, pred.height, pred.channels);
  double ssim_sum = 0;
  for (int y = R; y < pred.height - R; ++y) {
    for (int x = R; x < pred.width - R; ++x) {
      if (!valid.at(x, y)) continue;
      for (int c = 0; c < pred.channels; ++c) {
        double m1 = 0, m2 = 0, e11 = 0, e22 = 0, e12 = 0;
        for (int dy = -R; dy <= R; ++dy)
          for (int dx = -R; dx <= R; ++dx) {
            double w = kernel[(dy + R) * 11 + (dx + R)];
            double px = pred.at(x + dx, y + dy, c);
            double tx = target.at(x + dx, y + dy, c);
            m1 += w * px;
            m2 += w * tx;
            e11 += w * px * px;
            e22 += w * tx * tx;
            e12 += w * px * tx;
          }
        double a1 = 2 * m1 * m2 + detail::kSsimC1;
        double a2 = 2 * (e12 - m1 * m2) + detail::kSsimC2;
        double b1 = m1 * m1 + m2 * m2 + detail::kSsimC1;
        double b2 = (e11 - m1 * m1) + (e22 - m2 * m2) + detail::kSsimC2;
        double s = (a1 * a2) / (b1 * b2);
        ssim_sum += s;
        // partials of s w.r.t. (m1, e11, e12)
        double q1 = a2 / (b1 * b2);  // ds/da1 factor
        double q2 = a1 / (b1 * b2);
        double ds_dm1 = q1 * 2 * m2 + q2 * (-2 * m2) - s / b1 * 2 * m1 - s / b2 * (-2 * m1);
        double ds_de11 = -s / b2;
        double ds_de12 = q2 * 2;
        c_mean.at(x, y, c) = ds_dm1;
        c_e11.at(x, y, c) = ds_de11;
        c_e12.at(x, y, c) = ds_de12;
      }
    }
  }
  r.value = 1.0 - ssim_sum * inv_n;

  // scatter: grad_x(q) = -inv_n * sum_p w(q-p) [ds/dm1 + 2 x_q ds/de11 + y_q ds/de12]
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      for (int c = 0; c < pred.channels; ++c) {
        double acc = 0;
        for (int dy = -R; dy <= R; ++dy) {
          int py = y + dy;
          if (py < R || py >= pred.height - R) continue;
          for (int dx = -R; dx <= R; ++dx) {
            int px = x + dx;
            if (px < R || px >= pred.width - R) continue;
            if (!valid.at(px, py)) continue;
            double w = kernel[(R - dy) * 11 + (R - dx)];
            acc += w * (c_mean.at(px, py, c) + 2 * pred.at(x, y, c) * c_e11.at(px, py, c) +
                        target.at(x, y, c) * c_e12.at(px, py, c));
          }
        }
        r.grad_pred.at(x, y, c) = -inv_n * acc;
      }
    }
  }
  return r;
}

}  // namespace dis

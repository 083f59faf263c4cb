#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dis/mesh.hpp"

namespace dis {

// One named learnable tensor with Adam state and an optional projection
// range applied after every step.
struct Param {
  std::vector<double> values;
  std::vector<double> moment1, moment2;
  int64_t step = 0;
  bool frozen = false;
  std::optional<std::pair<double, double>> project_range;

  explicit Param(size_t n = 0, double fill = 0)
      : values(n, fill), moment1(n, 0.0), moment2(n, 0.0) {}
};

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Standard Adam update with bias correction, then range projection.
// Frozen parameters only advance their step counter.
inline void adam_step(Param& p, const std::vector<double>& grads, const AdamConfig& cfg) {
  if (grads.size() != p.values.size())
    throw ArgumentError("adam_step: gradient size != parameter size");
  p.step += 1;
  if (p.frozen) return;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
  for (size_t i = 0; i < p.values.size(); ++i) {
    double g = grads[i];
    p.moment1[i] = cfg.beta1 * p.moment1[i] + (1 - cfg.beta1) * g;
    p.moment2[i] = cfg.beta2 * p.moment2[i] + (1 - cfg.beta2) * g * g;
    double m_hat = p.moment1[i] / bc1;
    double v_hat = p.moment2[i] / bc2;
    p.values[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
  if (p.project_range) {
    for (auto& v : p.values) v = clamp(v, p.project_range->first, p.project_range->second);
  }
}

// Named handles to every learnable tensor of a scene state.
struct ParamSet {
  std::map<std::string, Param> params;

  Param& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ArgumentError("ParamSet: unknown parameter " + name);
    return it->second;
  }

  void freeze(const std::string& name, bool frozen = true) { at(name).frozen = frozen; }
};

struct LossWeights {
  double w_mse = 1.0;
  double w_ssim = 0.2;
  double w_edge = 1.0;
  double w_normal = 0.01;
  double w_laplacian = 0.1;
  double w_albedo_prior = 1.0;

  void validate() const {
    for (double w : {w_mse, w_ssim, w_edge, w_normal, w_laplacian, w_albedo_prior})
      if (w < 0) throw ArgumentError("LossWeights: weights must be nonnegative");
  }
};

}  // namespace dis

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "dis/image.hpp"
#include "dis/shade.hpp"

namespace dis {

struct ConfigurationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DeshadeResult {
  Image albedo;      // de-shaded, clamped to [0,1]
  Mask confidence;   // 1 where the division was well-conditioned
};

constexpr double kDefaultShadingFloor = 0.05;

// Analytic inverse of the multiplicative shading model: where the shading
// image S is well above zero, albedo_hat = albedo_shaded / S channel-wise.
// Pixels where min-channel S drops below s_floor pass through unchanged with
// confidence 0.
inline DeshadeResult deshade_analytic(const Image& albedo_shaded, const Image& shading,
                                      const Mask& mask, double s_floor = kDefaultShadingFloor) {
  if (!albedo_shaded.same_shape(shading) || mask.width != albedo_shaded.width ||
      mask.height != albedo_shaded.height)
    throw ArgumentError("deshade_analytic: resolution mismatch");
  DeshadeResult r;
  r.albedo = albedo_shaded;
  r.confidence = Mask(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      Vec3 s = shading.rgb(x, y);
      double s_min = std::min({s.x, s.y, s.z});
      if (s_min < s_floor) continue;  // passthrough, confidence 0
      Vec3 a = albedo_shaded.rgb(x, y);
      r.albedo.set_rgb(x, y, {clamp(a.x / s.x, 0.0, 1.0), clamp(a.y / s.y, 0.0, 1.0),
                              clamp(a.z / s.z, 0.0, 1.0)});
      r.confidence.set(x, y, true);
    }
  }
  return r;
}

inline std::string frame_file_name(int frame) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.pfm", frame);
  return buf;
}

// File-based provider: an externally trained de-shader (or any offline
// process) drops per-frame PFM maps into a directory keyed by frame index.
inline Image deshade_external(const std::string& directory, int frame, int width, int height) {
  auto path = std::filesystem::path(directory) / frame_file_name(frame);
  if (!std::filesystem::exists(path))
    throw IoError("deshade_external: missing file for frame " + std::to_string(frame) + ": " +
                  path.string());
  Image img = load_pfm(path.string());
  if (img.width != width || img.height != height)
    throw IoError("deshade_external: " + path.string() + ": resolution mismatch");
  return img;
}

enum class NormalPriorKind { kIdentity, kGtNoisy, kExternal };

struct NormalPriorConfig {
  NormalPriorKind kind = NormalPriorKind::kIdentity;
  double noise_sigma_deg = 0;      // gt_noisy
  uint64_t seed = 0;               // gt_noisy
  std::string external_directory;  // external
};

// M_enhance stand-ins. identity returns the surface normals unchanged;
// gt_noisy perturbs ground-truth normals by independent random axis-angle
// rotations (angle ~ N(0, sigma^2), fresh per frame) to model a temporally
// unstable 2D prior; external loads per-frame PFM maps.
inline Image normal_prior(const Image& n_surf, const Mask& mask, int frame,
                          const NormalPriorConfig& config, const Image* gt_normals = nullptr) {
  switch (config.kind) {
    case NormalPriorKind::kIdentity:
      return n_surf;
    case NormalPriorKind::kGtNoisy: {
      if (!gt_normals) throw ConfigurationError("normal_prior: gt_noisy requires GT normal maps");
      Image out = *gt_normals;
      // one deterministic stream per (seed, frame)
      std::mt19937_64 rng(config.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(frame) + 1);
      std::normal_distribution<double> angle_dist(0.0, deg_to_rad(config.noise_sigma_deg));
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
          if (!mask.at(x, y)) continue;
          Vec3 n = out.rgb(x, y);
          if (config.noise_sigma_deg <= 0) continue;
          // random axis in the tangent plane, so the deviation equals |angle|
          Vec3 ref = std::abs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
          Vec3 t1 = normalize(cross(n, ref));
          Vec3 t2 = cross(normalize(n), t1);
          double phi = 2.0 * kPi * uni(rng);
          Vec3 axis = std::cos(phi) * t1 + std::sin(phi) * t2;
          double angle = angle_dist(rng);
          Vec3 rotated = Mat3::rotation_axis_angle(axis, angle) * n;
          out.set_rgb(x, y, normalize(rotated));
        }
      }
      return out;
    }
    case NormalPriorKind::kExternal:
      return deshade_external(config.external_directory, frame, n_surf.width, n_surf.height);
  }
  throw ConfigurationError("normal_prior: unknown provider");
}

}  // namespace dis

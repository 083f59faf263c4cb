#pragma once

#include <cmath>
#include <stdexcept>

#include "dis/mesh.hpp"
#include "dis/vec.hpp"

namespace dis {

struct MaterialSample {
  Vec3 albedo;       // RGB in [0,1]
  double roughness;  // [0.01, 1]
};

enum class BrdfMode { kLiteral, kMicrofacet };

// Evaluation plus the partial derivatives the renderer's adjoint needs.
// d_albedo is dR_c/d(albedo_c) (diagonal, same scalar per channel);
// d_roughness is dR_c/d(roughness) (channel-independent);
// d_normal is the gradient of the channel-shared specular scalar w.r.t. n
// (literal mode and the diffuse term carry no normal dependence).
struct BrdfEval {
  Vec3 value;
  double d_albedo = 0;
  double d_roughness = 0;
  Vec3 d_normal{0, 0, 0};
};

constexpr double kFresnelF0 = 0.04;

// mode kLiteral: R = albedo + roughness per channel (direction-independent
// diffuse/specular split with both energy fractions at 1).
// mode kMicrofacet: R = albedo/pi + D*F*V with GGX distribution
// (alpha = roughness), height-correlated Smith visibility and Schlick
// Fresnel at F0 = 0.04; zero when either cosine is <= 0.
inline BrdfEval brdf_eval(const MaterialSample& material, const Vec3& n, const Vec3& omega_i,
                          const Vec3& omega_o, BrdfMode mode) {
  if (std::abs(length(n) - 1.0) > 1e-3 || std::abs(length(omega_i) - 1.0) > 1e-3 ||
      std::abs(length(omega_o) - 1.0) > 1e-3)
    throw ArgumentError("brdf_eval: direction inputs must be unit length");

  BrdfEval out;
  if (mode == BrdfMode::kLiteral) {
    out.value = material.albedo + Vec3{material.roughness, material.roughness, material.roughness};
    out.d_albedo = 1.0;
    out.d_roughness = 1.0;
    return out;
  }

  constexpr double inv_pi = 1.0 / kPi;
  out.value = material.albedo * inv_pi;
  out.d_albedo = inv_pi;

  double cos_i = dot(n, omega_i);
  double cos_o = dot(n, omega_o);
  if (cos_i <= 0 || cos_o <= 0) return out;

  double a = material.roughness;
  Vec3 h = normalize(omega_i + omega_o);
  double ndoth = dot(n, h);
  double hdoto = dot(h, omega_o);

  // GGX normal distribution
  double a2 = a * a;
  double d_denom = ndoth * ndoth * (a2 - 1.0) + 1.0;
  double D = a2 / (kPi * d_denom * d_denom);
  double dD_dndoth = -4.0 * a2 * (a2 - 1.0) * ndoth / (kPi * d_denom * d_denom * d_denom);
  double dD_da = 2.0 * a / (kPi * d_denom * d_denom) -
                 4.0 * a2 * a * ndoth * ndoth / (kPi * d_denom * d_denom * d_denom);

  // Schlick Fresnel (independent of n and roughness)
  double one_m = 1.0 - clamp(hdoto, 0.0, 1.0);
  double F = kFresnelF0 + (1.0 - kFresnelF0) * one_m * one_m * one_m * one_m * one_m;

  // height-correlated Smith visibility: V = 0.5 / S
  double la = std::sqrt(a2 + (1.0 - a2) * cos_i * cos_i);   // lambda term paired with cos_o
  double lo = std::sqrt(a2 + (1.0 - a2) * cos_o * cos_o);
  double S = cos_o * la + cos_i * lo;
  double V = 0.5 / S;
  double dla_dcosi = (1.0 - a2) * cos_i / la;
  double dlo_dcoso = (1.0 - a2) * cos_o / lo;
  double dla_da = a * (1.0 - cos_i * cos_i) / la;
  double dlo_da = a * (1.0 - cos_o * cos_o) / lo;
  double dS_dcosi = cos_o * dla_dcosi + lo;
  double dS_dcoso = la + cos_i * dlo_dcoso;
  double dS_da = cos_o * dla_da + cos_i * dlo_da;
  double dV_scale = -0.5 / (S * S);

  double f_spec = D * F * V;
  out.value += Vec3{f_spec, f_spec, f_spec};
  out.d_roughness = F * (V * dD_da + D * dV_scale * dS_da);

  double df_dcosi = D * F * dV_scale * dS_dcosi;
  double df_dcoso = D * F * dV_scale * dS_dcoso;
  double df_dndoth = F * V * dD_dndoth;
  out.d_normal = df_dcosi * omega_i + df_dcoso * omega_o + df_dndoth * h;
  return out;
}

}  // namespace dis

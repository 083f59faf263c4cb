#pragma once

#include <vector>

#include "dis/brdf.hpp"
#include "dis/bvh.hpp"
#include "dis/image.hpp"
#include "dis/parallel.hpp"
#include "dis/probes.hpp"
#include "dis/raster.hpp"

namespace dis {

// Per-(pixel, probe) occlusion bits, pixel-major, defined on masked pixels.
struct VisibilityBuffer {
  int width = 0, height = 0, probe_count = 0;
  std::vector<uint8_t> bits;

  VisibilityBuffer() = default;
  VisibilityBuffer(int w, int h, int probes)
      : width(w), height(h), probe_count(probes),
        bits(static_cast<size_t>(w) * h * probes, 0) {}

  bool visible(size_t pixel, int probe) const { return bits[pixel * probe_count + probe] != 0; }
  void set(size_t pixel, int probe, bool v) { bits[pixel * probe_count + probe] = v ? 1 : 0; }
};

constexpr double kDefaultVisibilityEps = 1e-4;

// V(pixel, i) = 1 iff the ray from x_surf + eps*omega_i along omega_i clears
// the mesh; eps = epsilon_scale * bbox diagonal of the occluder mesh.
// Callers pass the rasterized mesh position map: the offset-displaced point
// can lie inside the occluder for inward offsets, which would falsely occlude
// every probe. Surface detail affects shading only through n_surf.
inline VisibilityBuffer visibility(const std::vector<Vec3>& x_surf, const Mask& mask,
                                   const Bvh& bvh, const LightProbeSphere& probes,
                                   double epsilon_scale, double bbox_diagonal) {
  VisibilityBuffer vis(mask.width, mask.height, probes.count());
  double eps = epsilon_scale * bbox_diagonal;
  size_t np = static_cast<size_t>(mask.width) * mask.height;
  parallel_for(static_cast<int64_t>(np), [&](int64_t i) {
    size_t pi = static_cast<size_t>(i);
    if (!mask.bits[pi]) return;
    for (int p = 0; p < probes.count(); ++p) {
      Ray ray;
      ray.direction = probes.directions[p];
      ray.origin = x_surf[pi] + eps * ray.direction;
      vis.set(pi, p, !bvh.any_hit(ray));
    }
  });
  return vis;
}

struct RenderInputs {
  const GBuffer* gbuffer = nullptr;
  const std::vector<Vec3>* x_surf = nullptr;
  const std::vector<Vec3>* n_surf = nullptr;
  const Image* albedo = nullptr;     // 3-channel, gbuffer resolution
  const Image* roughness = nullptr;  // 1-channel
  const LightProbeSphere* probes = nullptr;
  const VisibilityBuffer* vis = nullptr;
  Vec3 camera_position;
  BrdfMode mode = BrdfMode::kLiteral;
  Vec3 background{0, 0, 0};

  void check() const {
    if (!gbuffer || !x_surf || !n_surf || !albedo || !roughness || !probes || !vis)
      throw ArgumentError("render: missing input");
    size_t np = static_cast<size_t>(gbuffer->width) * gbuffer->height;
    if (x_surf->size() != np || n_surf->size() != np ||
        albedo->width != gbuffer->width || albedo->height != gbuffer->height ||
        albedo->channels != 3 || roughness->width != gbuffer->width ||
        roughness->height != gbuffer->height || roughness->channels != 1 ||
        vis->width != gbuffer->width || vis->height != gbuffer->height ||
        vis->probe_count != probes->count())
      throw ArgumentError("render: input resolution mismatch");
  }
};

// Discretized rendering integral over the probe sphere:
//   I = sum_i L_i * R(albedo, roughness, n, w_i, w_o) * V_i * max(w_i.n, 0) * dw_i
// w_o points from the surface to the camera; unmasked pixels get background.
inline Image render_pbr(const RenderInputs& in) {
  in.check();
  const GBuffer& gb = *in.gbuffer;
  Image img(gb.width, gb.height, 3);
  size_t np = static_cast<size_t>(gb.width) * gb.height;
  parallel_for(static_cast<int64_t>(np), [&](int64_t i) {
    size_t pi = static_cast<size_t>(i);
    int x = static_cast<int>(pi % gb.width), y = static_cast<int>(pi / gb.width);
    if (!gb.mask.bits[pi]) {
      img.set_rgb(x, y, in.background);
      return;
    }
    MaterialSample mat{in.albedo->rgb(x, y), in.roughness->at(x, y)};
    const Vec3& n = (*in.n_surf)[pi];
    Vec3 wo = normalize(in.camera_position - (*in.x_surf)[pi]);
    Vec3 acc{0, 0, 0};
    for (int p = 0; p < in.probes->count(); ++p) {
      if (!in.vis->visible(pi, p)) continue;
      const Vec3& wi = in.probes->directions[p];
      double cosine = dot(wi, n);
      if (cosine <= 0) continue;
      BrdfEval brdf = brdf_eval(mat, n, wi, wo, in.mode);
      acc += (cosine * in.probes->solid_angles[p]) * (in.probes->radiance[p] * brdf.value);
    }
    img.set_rgb(x, y, acc);
  });
  return img;
}

struct RenderGradients {
  Image d_albedo;     // 3-channel
  Image d_roughness;  // 1-channel
  std::vector<Vec3> d_probes;
  std::vector<Vec3> d_n_surf;
};

// Adjoint of render_pbr for a per-pixel RGB gradient image. Pixel quantities
// write disjointly; probe-radiance gradients reduce through fixed-order
// chunk merging, so results do not depend on the thread count.
inline RenderGradients render_pbr_backward(const RenderInputs& in, const Image& grad_image) {
  in.check();
  const GBuffer& gb = *in.gbuffer;
  if (!grad_image.same_shape(Image(gb.width, gb.height, 3)))
    throw ArgumentError("render_pbr_backward: gradient image shape mismatch");
  RenderGradients out;
  out.d_albedo = Image(gb.width, gb.height, 3);
  out.d_roughness = Image(gb.width, gb.height, 1);
  out.d_n_surf.assign(static_cast<size_t>(gb.width) * gb.height, Vec3{0, 0, 0});
  size_t np = static_cast<size_t>(gb.width) * gb.height;

  out.d_probes = parallel_reduce<std::vector<Vec3>>(
      static_cast<int64_t>(np), std::vector<Vec3>(in.probes->count(), Vec3{0, 0, 0}),
      [&](int64_t i, std::vector<Vec3>& probe_acc) {
        size_t pi = static_cast<size_t>(i);
        if (!gb.mask.bits[pi]) return;
        int x = static_cast<int>(pi % gb.width), y = static_cast<int>(pi / gb.width);
        MaterialSample mat{in.albedo->rgb(x, y), in.roughness->at(x, y)};
        const Vec3& n = (*in.n_surf)[pi];
        Vec3 wo = normalize(in.camera_position - (*in.x_surf)[pi]);
        Vec3 g = grad_image.rgb(x, y);
        Vec3 d_alb{0, 0, 0};
        double d_rgh = 0;
        Vec3 d_n{0, 0, 0};
        for (int p = 0; p < in.probes->count(); ++p) {
          if (!in.vis->visible(pi, p)) continue;
          const Vec3& wi = in.probes->directions[p];
          double cosine = dot(wi, n);
          if (cosine <= 0) continue;
          double dw = in.probes->solid_angles[p];
          const Vec3& L = in.probes->radiance[p];
          BrdfEval brdf = brdf_eval(mat, n, wi, wo, in.mode);
          Vec3 gL = g * L;  // channel-wise product of upstream grad and radiance
          double gLsum = gL.x + gL.y + gL.z;
          probe_acc[p] += (cosine * dw) * (g * brdf.value);
          d_alb += (cosine * dw * brdf.d_albedo) * gL;
          d_rgh += cosine * dw * brdf.d_roughness * gLsum;
          // cosine factor and the specular lobe both depend on n
          Vec3 value_dot_gL = brdf.value * gL;
          double vsum = value_dot_gL.x + value_dot_gL.y + value_dot_gL.z;
          d_n += dw * (vsum * wi + cosine * gLsum * brdf.d_normal);
        }
        out.d_albedo.set_rgb(x, y, d_alb);
        out.d_roughness.at(x, y) = d_rgh;
        out.d_n_surf[pi] = d_n;
      },
      [](std::vector<Vec3>& a, const std::vector<Vec3>& b) {
        for (size_t p = 0; p < a.size(); ++p) a[p] += b[p];
      });
  return out;
}

// S = render with unit white albedo and zero specular in literal mode:
//   S = sum_i L_i * V * max(w_i.n, 0) * dw_i
inline Image shading_image(const GBuffer& gb, const std::vector<Vec3>& x_surf,
                           const std::vector<Vec3>& n_surf, const LightProbeSphere& probes,
                           const VisibilityBuffer& vis) {
  Image img(gb.width, gb.height, 3);
  size_t np = static_cast<size_t>(gb.width) * gb.height;
  if (x_surf.size() != np || n_surf.size() != np || vis.width != gb.width ||
      vis.height != gb.height || vis.probe_count != probes.count())
    throw ArgumentError("shading_image: input resolution mismatch");
  parallel_for(static_cast<int64_t>(np), [&](int64_t i) {
    size_t pi = static_cast<size_t>(i);
    if (!gb.mask.bits[pi]) return;
    int x = static_cast<int>(pi % gb.width), y = static_cast<int>(pi / gb.width);
    const Vec3& n = n_surf[pi];
    Vec3 acc{0, 0, 0};
    for (int p = 0; p < probes.count(); ++p) {
      if (!vis.visible(pi, p)) continue;
      double cosine = dot(probes.directions[p], n);
      if (cosine <= 0) continue;
      acc += (cosine * probes.solid_angles[p]) * probes.radiance[p];
    }
    img.set_rgb(x, y, acc);
  });
  return img;
}

// Render under a new environment: resample the equirectangular map onto the
// probe grid, then run the standard integral.
inline Image relight(RenderInputs in, const Image& envmap, LightProbeSphere& probes_out) {
  probes_out = *in.probes;
  probes_from_envmap(probes_out, envmap);
  in.probes = &probes_out;
  return render_pbr(in);
}

}  // namespace dis

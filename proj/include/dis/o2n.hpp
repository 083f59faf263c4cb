#pragma once

#include <cstdint>
#include <vector>

#include "dis/field.hpp"
#include "dis/parallel.hpp"
#include "dis/raster.hpp"

namespace dis {

struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-pixel offset surface points and converted normals.
struct SurfaceMaps {
  int width = 0, height = 0;
  std::vector<Vec3> x_surf;
  std::vector<Vec3> n_surf;
  Mask validity;  // stencil fully inside the mask and depth-continuous
};

constexpr double kDefaultDepthTau = 0.03;

// x_surf = x + n * l with l queried from the offset field at the pixel uv.
// Returns the point map plus the cached scalar offsets (needed by backward).
inline std::vector<Vec3> surface_points(const GBuffer& gb, const UVField& offset_field, int frame,
                                        std::vector<double>* cached_offsets = nullptr) {
  if (offset_field.channels != 1) throw ArgumentError("surface_points: offset field must have C=1");
  size_t np = static_cast<size_t>(gb.width) * gb.height;
  std::vector<Vec3> x_surf(np);
  if (cached_offsets) cached_offsets->assign(np, 0.0);
  parallel_for(static_cast<int64_t>(np), [&](int64_t i) {
    size_t pi = static_cast<size_t>(i);
    if (!gb.mask.bits[pi]) return;
    double l = field_query(offset_field, gb.uv[pi], frame)[0];
    x_surf[pi] = gb.position[pi] + gb.normal[pi] * l;
    if (cached_offsets) (*cached_offsets)[pi] = l;
  });
  return x_surf;
}

namespace detail {

// Stencil neighbor offsets in image space: right, up, left, down. The four
// cross-product terms pair consecutive neighbors, so each term's normal
// points toward the camera for a front-facing surface.
constexpr int kStencilDx[4] = {1, 0, -1, 0};
constexpr int kStencilDy[4] = {0, -1, 0, 1};

}  // namespace detail

// Cached forward state for the adjoint pass.
struct O2nCache {
  std::vector<uint8_t> term_mask;   // bit t set when cross term t survived
  std::vector<Vec3> n_unnormalized;
  std::vector<double> n_norm;
  std::vector<uint8_t> fallback;    // pixel used the gbuffer base normal
  double depth_tau = kDefaultDepthTau;
  bool valid = false;
};

// Five-point normal conversion: at pixel i with neighbors j,k,l,m,
//   n_i = (xj-xi)x(xk-xi) + (xk-xi)x(xl-xi) + (xl-xi)x(xm-xi) + (xm-xi)x(xj-xi)
// normalized. Terms with an unmasked or depth-discontinuous neighbor are
// skipped; pixels with fewer than 2 surviving terms (or a near-zero sum) fall
// back to the gbuffer base normal and are flagged invalid.
inline SurfaceMaps offsets_to_normals(const std::vector<Vec3>& x_surf, const GBuffer& gb,
                                      double depth_tau = kDefaultDepthTau,
                                      O2nCache* cache = nullptr) {
  size_t np = static_cast<size_t>(gb.width) * gb.height;
  if (x_surf.size() != np) throw ArgumentError("offsets_to_normals: x_surf size mismatch");
  SurfaceMaps maps;
  maps.width = gb.width;
  maps.height = gb.height;
  maps.x_surf = x_surf;
  maps.n_surf.assign(np, Vec3{0, 0, 0});
  maps.validity = Mask(gb.width, gb.height);
  if (cache) {
    cache->term_mask.assign(np, 0);
    cache->n_unnormalized.assign(np, Vec3{0, 0, 0});
    cache->n_norm.assign(np, 0.0);
    cache->fallback.assign(np, 0);
    cache->depth_tau = depth_tau;
    cache->valid = true;
  }
  parallel_for(static_cast<int64_t>(np), [&](int64_t idx) {
    size_t pi = static_cast<size_t>(idx);
    if (!gb.mask.bits[pi]) return;
    int x = static_cast<int>(pi % gb.width), y = static_cast<int>(pi / gb.width);
    double d0 = gb.depth[pi];
    bool nb_ok[4];
    size_t nb_idx[4];
    for (int t = 0; t < 4; ++t) {
      int nx = x + detail::kStencilDx[t], ny = y + detail::kStencilDy[t];
      nb_ok[t] = nx >= 0 && nx < gb.width && ny >= 0 && ny < gb.height;
      if (nb_ok[t]) {
        nb_idx[t] = gb.index(nx, ny);
        nb_ok[t] = gb.mask.bits[nb_idx[t]] &&
                   std::abs(gb.depth[nb_idx[t]] - d0) <= depth_tau * d0;
      }
    }
    Vec3 sum{0, 0, 0};
    uint8_t terms = 0;
    int surviving = 0;
    const Vec3& xi = x_surf[pi];
    for (int t = 0; t < 4; ++t) {
      int a = t, b = (t + 1) % 4;
      if (!nb_ok[a] || !nb_ok[b]) continue;
      sum += cross(x_surf[nb_idx[a]] - xi, x_surf[nb_idx[b]] - xi);
      terms |= static_cast<uint8_t>(1 << t);
      ++surviving;
    }
    double norm = length(sum);
    bool fallback = surviving < 2 || norm < 1e-12;
    if (fallback) {
      maps.n_surf[pi] = gb.normal[pi];
    } else {
      maps.n_surf[pi] = sum / norm;
      maps.validity.bits[pi] = surviving == 4 ? 1 : 0;
    }
    if (cache) {
      cache->term_mask[pi] = fallback ? 0 : terms;
      cache->n_unnormalized[pi] = sum;
      cache->n_norm[pi] = norm;
      cache->fallback[pi] = fallback ? 1 : 0;
    }
  });
  return maps;
}

struct O2nGradients {
  FieldGradient d_offset_field;
  std::vector<Vec3> d_vertex_positions;
  std::vector<Vec3> d_vertex_normals;
  // intermediate per-pixel gradients, exposed for composition/testing
  std::vector<Vec3> d_gb_position;
  std::vector<Vec3> d_gb_normal;
};

// Adjoint of the full chain: grad(n_surf) -> stencil cross products ->
// neighbor x_surf points -> (via x_surf = x + n*l) offset-field nodes and
// rasterized position/normal -> (via rasterize_backward) mesh vertices.
// Skipped terms contribute nothing; fallback pixels route straight to the
// base-normal gradient.
inline O2nGradients o2n_backward(const TriangleMesh& mesh, const GBuffer& gb,
                                 const UVField& offset_field, int frame,
                                 const std::vector<Vec3>& x_surf,
                                 const std::vector<double>& cached_offsets, const O2nCache& cache,
                                 const std::vector<Vec3>& grad_n_surf,
                                 const std::vector<Vec3>* grad_x_surf_extra = nullptr) {
  size_t np = static_cast<size_t>(gb.width) * gb.height;
  if (!cache.valid) throw StateError("o2n_backward: forward cache missing");
  if (grad_n_surf.size() != np) throw ArgumentError("o2n_backward: grad_n_surf size mismatch");

  // pass 1: pixel-parallel scatter of stencil adjoints into a per-pixel
  // x_surf gradient image (gather formulation: each pixel collects the
  // contributions in which it participates, so writes stay disjoint)
  std::vector<Vec3> grad_x_surf(np, Vec3{0, 0, 0});
  std::vector<Vec3> grad_base_normal(np, Vec3{0, 0, 0});

  // per-pixel gradient of the *unnormalized* stencil sum
  std::vector<Vec3> grad_sum(np, Vec3{0, 0, 0});
  parallel_for(static_cast<int64_t>(np), [&](int64_t idx) {
    size_t pi = static_cast<size_t>(idx);
    if (!gb.mask.bits[pi]) return;
    const Vec3& g = grad_n_surf[pi];
    if (cache.fallback[pi]) {
      grad_base_normal[pi] = g;
      return;
    }
    double norm = cache.n_norm[pi];
    Vec3 u = cache.n_unnormalized[pi] / norm;
    grad_sum[pi] = (g - dot(g, u) * u) / norm;
  });

  // gather: pixel q accumulates d(sum_p)/d(x_q) over all stencils p it joins
  parallel_for(static_cast<int64_t>(np), [&](int64_t idx) {
    size_t qi = static_cast<size_t>(idx);
    if (!gb.mask.bits[qi]) return;
    int qx = static_cast<int>(qi % gb.width), qy = static_cast<int>(qi / gb.width);
    Vec3 acc{0, 0, 0};
    // as center of its own stencil
    {
      uint8_t terms = cache.term_mask[qi];
      const Vec3& gs = grad_sum[qi];
      const Vec3& xi = x_surf[qi];
      for (int t = 0; t < 4; ++t) {
        if (!(terms & (1 << t))) continue;
        int a = t, b = (t + 1) % 4;
        size_t ia = gb.index(qx + detail::kStencilDx[a], qy + detail::kStencilDy[a]);
        size_t ib = gb.index(qx + detail::kStencilDx[b], qy + detail::kStencilDy[b]);
        Vec3 ea = x_surf[ia] - xi, eb = x_surf[ib] - xi;
        // term = ea x eb; d/d ea = eb x gs, d/d eb = gs x ea; center gets minus both
        acc -= cross(eb, gs) + cross(gs, ea);
      }
    }
    // as neighbor t of center p (p = q - stencil offset t)
    for (int t = 0; t < 4; ++t) {
      int px = qx - detail::kStencilDx[t], py = qy - detail::kStencilDy[t];
      if (px < 0 || px >= gb.width || py < 0 || py >= gb.height) continue;
      size_t ppi = gb.index(px, py);
      if (!gb.mask.bits[ppi]) continue;
      uint8_t terms = cache.term_mask[ppi];
      const Vec3& gs = grad_sum[ppi];
      const Vec3& xp = x_surf[ppi];
      int prev = (t + 3) % 4;
      // q is the first slot of term t: term = (x_q - x_p) x (x_next - x_p)
      if (terms & (1 << t)) {
        size_t ib = gb.index(px + detail::kStencilDx[(t + 1) % 4],
                             py + detail::kStencilDy[(t + 1) % 4]);
        acc += cross(x_surf[ib] - xp, gs);
      }
      // q is the second slot of term prev: term = (x_prev - x_p) x (x_q - x_p)
      if (terms & (1 << prev)) {
        size_t ia = gb.index(px + detail::kStencilDx[prev], py + detail::kStencilDy[prev]);
        acc += cross(gs, x_surf[ia] - xp);
      }
    }
    if (grad_x_surf_extra) acc += (*grad_x_surf_extra)[qi];
    grad_x_surf[qi] = acc;
  });

  // chain x_surf = x + n*l into gbuffer attributes and the offset field
  O2nGradients out;
  out.d_offset_field = FieldGradient::zeros_like(offset_field);
  out.d_gb_position.assign(np, Vec3{0, 0, 0});
  out.d_gb_normal.assign(np, Vec3{0, 0, 0});
  // field scatter is serial (touched nodes overlap between pixels)
  for (size_t pi = 0; pi < np; ++pi) {
    if (!gb.mask.bits[pi]) continue;
    const Vec3& g = grad_x_surf[pi];
    out.d_gb_position[pi] = g;
    out.d_gb_normal[pi] = cached_offsets[pi] * g + grad_base_normal[pi];
    double gl = dot(gb.normal[pi], g);
    if (gl != 0.0)
      field_query_backward(offset_field, gb.uv[pi], frame, {gl}, out.d_offset_field);
  }

  auto rg = rasterize_backward(mesh, gb, out.d_gb_position, out.d_gb_normal);
  out.d_vertex_positions = std::move(rg.d_vertex_positions);
  out.d_vertex_normals = std::move(rg.d_vertex_normals);
  return out;
}

}  // namespace dis

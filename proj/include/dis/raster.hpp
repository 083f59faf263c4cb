#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dis/image.hpp"
#include "dis/mesh.hpp"
#include "dis/parallel.hpp"
#include "dis/vec.hpp"

namespace dis {

struct Camera {
  double fx = 1, fy = 1;  // focal lengths in pixels
  double cx = 0, cy = 0;  // principal point in pixels
  RigidTransform world_to_camera = RigidTransform::identity();
  int width = 1, height = 1;

  void validate() const {
    if (fx <= 0 || fy <= 0) throw ArgumentError("camera: focal lengths must be positive");
    if (width < 1 || height < 1) throw ArgumentError("camera: resolution must be >= 1x1");
    if (world_to_camera.rotation.orthonormality_error() > 1e-6)
      throw ArgumentError("camera: rotation not orthonormal");
  }

  Vec3 position() const { return world_to_camera.inverse().translation; }

  // Simple look-at constructor, +y up preference, image y down.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg,
                        int width, int height) {
    Vec3 forward = normalize(target - eye);            // camera +z
    Vec3 right = normalize(cross(forward, up));        // camera +x
    Vec3 down = cross(forward, right);                 // camera +y (image down)
    Mat3 r;
    for (int c = 0; c < 3; ++c) {
      r(0, c) = right[c];
      r(1, c) = down[c];
      r(2, c) = forward[c];
    }
    Camera cam;
    cam.world_to_camera = {r, -(r * eye)};
    cam.width = width;
    cam.height = height;
    cam.fy = 0.5 * height / std::tan(0.5 * deg_to_rad(fov_y_deg));
    cam.fx = cam.fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    return cam;
  }
};

constexpr int kNoTriangle = -1;
constexpr double kNearPlane = 1e-3;
constexpr double kDepthTieEps = 1e-9;

struct GBuffer {
  int width = 0, height = 0;
  Mask mask;
  std::vector<int> triangle_id;
  std::vector<Vec3> barycentric;  // perspective-corrected, sums to 1 on mask
  std::vector<Vec2> uv;
  std::vector<Vec3> position;  // world space
  std::vector<Vec3> normal;    // interpolated base normal, unit on mask
  std::vector<double> depth;   // camera z, > 0 on mask

  GBuffer() = default;
  GBuffer(int w, int h)
      : width(w),
        height(h),
        mask(w, h),
        triangle_id(static_cast<size_t>(w) * h, kNoTriangle),
        barycentric(static_cast<size_t>(w) * h),
        uv(static_cast<size_t>(w) * h),
        position(static_cast<size_t>(w) * h),
        normal(static_cast<size_t>(w) * h),
        depth(static_cast<size_t>(w) * h, 0.0) {}

  size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
};

struct RasterizeOptions {
  bool cull_backfaces = true;
};

namespace detail {

struct ProjectedVertex {
  Vec2 screen;  // pixel coordinates
  double z;     // camera depth
  Vec3 cam;     // camera-space position
};

}  // namespace detail

// Z-buffered perspective-correct rasterization. Coverage is hard; pixel
// centers sample at (i+0.5, j+0.5) with a top-left fill rule. Triangles
// touching the near plane are dropped whole. Depth ties within kDepthTieEps
// resolve to the smaller triangle id. Tile-parallel; output is bitwise
// identical for any thread count and triangle submission order.
inline GBuffer rasterize(const TriangleMesh& mesh, const Camera& camera,
                         const RasterizeOptions& opts = {}) {
  camera.validate();
  if (mesh.vertex_uvs.size() != mesh.vertex_count() ||
      mesh.vertex_normals.size() != mesh.vertex_count())
    throw ArgumentError("rasterize: mesh needs per-vertex uvs and normals");

  GBuffer gb(camera.width, camera.height);
  size_t nv = mesh.vertex_count();
  std::vector<detail::ProjectedVertex> proj(nv);
  for (size_t v = 0; v < nv; ++v) {
    Vec3 c = camera.world_to_camera.apply(mesh.vertex_positions[v]);
    proj[v].cam = c;
    proj[v].z = c.z;
    if (c.z > kNearPlane)
      proj[v].screen = {camera.fx * c.x / c.z + camera.cx, camera.fy * c.y / c.z + camera.cy};
  }

  const int tile = 32;
  int tiles_x = (camera.width + tile - 1) / tile;
  int tiles_y = (camera.height + tile - 1) / tile;
  std::vector<std::vector<int>> tile_tris(static_cast<size_t>(tiles_x) * tiles_y);

  // bin triangles in ascending id order
  for (size_t fi = 0; fi < mesh.face_count(); ++fi) {
    const auto& f = mesh.face_indices[fi];
    const auto &p0 = proj[f[0]], &p1 = proj[f[1]], &p2 = proj[f[2]];
    if (p0.z <= kNearPlane || p1.z <= kNearPlane || p2.z <= kNearPlane) continue;
    if (opts.cull_backfaces) {
      Vec3 n_cam = cross(p1.cam - p0.cam, p2.cam - p0.cam);
      Vec3 centroid = (p0.cam + p1.cam + p2.cam) / 3.0;
      if (dot(n_cam, centroid) >= 0) continue;  // normal points away from camera
    }
    double min_x = std::min({p0.screen.x, p1.screen.x, p2.screen.x});
    double max_x = std::max({p0.screen.x, p1.screen.x, p2.screen.x});
    double min_y = std::min({p0.screen.y, p1.screen.y, p2.screen.y});
    double max_y = std::max({p0.screen.y, p1.screen.y, p2.screen.y});
    int tx0 = std::max(0, static_cast<int>(std::floor(min_x)) / tile);
    int tx1 = std::min(tiles_x - 1, static_cast<int>(std::floor(max_x)) / tile);
    int ty0 = std::max(0, static_cast<int>(std::floor(min_y)) / tile);
    int ty1 = std::min(tiles_y - 1, static_cast<int>(std::floor(max_y)) / tile);
    if (tx1 < 0 || ty1 < 0 || tx0 >= tiles_x || ty0 >= tiles_y) continue;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        tile_tris[static_cast<size_t>(ty) * tiles_x + tx].push_back(static_cast<int>(fi));
  }

  auto edge = [](const Vec2& a, const Vec2& b, const Vec2& p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  };
  // top-left rule for the screen-space edge function with y down
  auto edge_accepts = [](double w, const Vec2& a, const Vec2& b) {
    if (w != 0) return true;
    bool top_left = (a.y == b.y && b.x < a.x) || (b.y > a.y);
    return top_left;
  };

  parallel_for(static_cast<int64_t>(tile_tris.size()), [&](int64_t t) {
    const auto& tris = tile_tris[static_cast<size_t>(t)];
    if (tris.empty()) return;
    int tx = static_cast<int>(t % tiles_x), ty = static_cast<int>(t / tiles_x);
    int x0 = tx * tile, x1 = std::min(camera.width, x0 + tile);
    int y0 = ty * tile, y1 = std::min(camera.height, y0 + tile);
    for (int fi : tris) {
      const auto& f = mesh.face_indices[fi];
      const auto &p0 = proj[f[0]], &p1 = proj[f[1]], &p2 = proj[f[2]];
      double area = edge(p0.screen, p1.screen, p2.screen);
      if (area == 0) continue;
      int px0 = std::max(x0, static_cast<int>(std::floor(
                                 std::min({p0.screen.x, p1.screen.x, p2.screen.x}) - 0.5)));
      int px1 = std::min(x1 - 1, static_cast<int>(std::ceil(
                                     std::max({p0.screen.x, p1.screen.x, p2.screen.x}))));
      int py0 = std::max(y0, static_cast<int>(std::floor(
                                 std::min({p0.screen.y, p1.screen.y, p2.screen.y}) - 0.5)));
      int py1 = std::min(y1 - 1, static_cast<int>(std::ceil(
                                     std::max({p0.screen.y, p1.screen.y, p2.screen.y}))));
      for (int y = py0; y <= py1; ++y) {
        for (int x = px0; x <= px1; ++x) {
          Vec2 p{x + 0.5, y + 0.5};
          double w0 = edge(p1.screen, p2.screen, p);
          double w1 = edge(p2.screen, p0.screen, p);
          double w2 = edge(p0.screen, p1.screen, p);
          bool inside;
          if (area > 0)
            inside = w0 >= 0 && w1 >= 0 && w2 >= 0 && edge_accepts(w0, p1.screen, p2.screen) &&
                     edge_accepts(w1, p2.screen, p0.screen) && edge_accepts(w2, p0.screen, p1.screen);
          else
            inside = w0 <= 0 && w1 <= 0 && w2 <= 0 &&
                     edge_accepts(-w0, p2.screen, p1.screen) &&
                     edge_accepts(-w1, p0.screen, p2.screen) &&
                     edge_accepts(-w2, p1.screen, p0.screen);
          if (!inside) continue;
          double s0 = w0 / area, s1 = w1 / area, s2 = w2 / area;  // screen barycentrics
          double inv_z = s0 / p0.z + s1 / p1.z + s2 / p2.z;
          if (inv_z <= 0) continue;
          double z = 1.0 / inv_z;
          size_t pi = gb.index(x, y);
          if (gb.mask.bits[pi]) {
            double old = gb.depth[pi];
            if (z > old - kDepthTieEps) {
              // deeper, or a tie: ids ascend within a tile, so keep the old one
              continue;
            }
          }
          Vec3 b{(s0 / p0.z) * z, (s1 / p1.z) * z, (s2 / p2.z) * z};
          gb.mask.bits[pi] = 1;
          gb.triangle_id[pi] = fi;
          gb.barycentric[pi] = b;
          gb.depth[pi] = z;
          gb.uv[pi] = b.x * mesh.vertex_uvs[f[0]] + b.y * mesh.vertex_uvs[f[1]] +
                      b.z * mesh.vertex_uvs[f[2]];
          gb.position[pi] = b.x * mesh.vertex_positions[f[0]] + b.y * mesh.vertex_positions[f[1]] +
                            b.z * mesh.vertex_positions[f[2]];
          gb.normal[pi] = normalize(b.x * mesh.vertex_normals[f[0]] +
                                    b.y * mesh.vertex_normals[f[1]] +
                                    b.z * mesh.vertex_normals[f[2]]);
        }
      }
    }
  });
  return gb;
}

struct RasterizeGradients {
  std::vector<Vec3> d_vertex_positions;
  std::vector<Vec3> d_vertex_normals;
};

// Adjoint of attribute interpolation under frozen coverage and barycentrics:
// each masked pixel scatters its gradient to the pixel's three vertices with
// the stored perspective-corrected weights. The normal gradient is routed
// through the per-pixel renormalization. Accumulation order is fixed
// (row-major chunks merged in order), so results are thread-count invariant.
inline RasterizeGradients rasterize_backward(const TriangleMesh& mesh, const GBuffer& gb,
                                             const std::vector<Vec3>& grad_position,
                                             const std::vector<Vec3>& grad_normal) {
  size_t np = static_cast<size_t>(gb.width) * gb.height;
  if (grad_position.size() != np || grad_normal.size() != np)
    throw ArgumentError("rasterize_backward: gradient buffers must match gbuffer resolution");
  struct Acc {
    std::vector<Vec3> dp, dn;
  };
  Acc zero;
  zero.dp.assign(mesh.vertex_count(), Vec3{0, 0, 0});
  zero.dn.assign(mesh.vertex_count(), Vec3{0, 0, 0});
  Acc total = parallel_reduce<Acc>(
      static_cast<int64_t>(np), zero,
      [&](int64_t i, Acc& acc) {
        size_t pi = static_cast<size_t>(i);
        if (!gb.mask.bits[pi]) return;
        const auto& f = mesh.face_indices[gb.triangle_id[pi]];
        const Vec3& b = gb.barycentric[pi];
        const Vec3& gp = grad_position[pi];
        for (int k = 0; k < 3; ++k) acc.dp[f[k]] += b[k] * gp;
        // unnormalized interpolated normal
        Vec3 m = b.x * mesh.vertex_normals[f[0]] + b.y * mesh.vertex_normals[f[1]] +
                 b.z * mesh.vertex_normals[f[2]];
        double l = length(m);
        if (l > 1e-14) {
          Vec3 u = m / l;
          const Vec3& gn_out = grad_normal[pi];
          Vec3 gm = (gn_out - dot(gn_out, u) * u) / l;
          for (int k = 0; k < 3; ++k) acc.dn[f[k]] += b[k] * gm;
        }
      },
      [](Acc& a, const Acc& b) {
        for (size_t v = 0; v < a.dp.size(); ++v) {
          a.dp[v] += b.dp[v];
          a.dn[v] += b.dn[v];
        }
      });
  return {std::move(total.dp), std::move(total.dn)};
}

}  // namespace dis

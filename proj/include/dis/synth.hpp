#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dis/bvh.hpp"
#include "dis/field.hpp"
#include "dis/image.hpp"
#include "dis/mesh.hpp"
#include "dis/o2n.hpp"
#include "dis/probes.hpp"
#include "dis/raster.hpp"
#include "dis/shade.hpp"
#include "dis/shapes.hpp"

namespace dis {

// Ground-truth supervision for one (view, frame): the Lambertian quadruple
// plus the correspondence map to the next frame (pixel index or -1).
struct FrameData {
  Image rgb, normal, albedo, shading;
  Mask mask;
  std::vector<int> corr;
};

struct SceneDataset {
  std::string recipe;
  uint64_t seed = 0;
  int width = 0, height = 0;
  bool mismatch = false;
  TriangleMesh mesh;  // fitting template; GT detail lives in gt_offset
  std::vector<Camera> cameras;
  std::vector<Pose> poses;  // one per frame; empty bone list = static
  LightProbeSphere gt_probes;
  UVField gt_offset;
  std::vector<std::vector<FrameData>> frames_by_view;  // [view][frame]

  int view_count() const { return static_cast<int>(cameras.size()); }
  int frame_count() const { return static_cast<int>(poses.size()); }
  const FrameData& at(int view, int frame) const { return frames_by_view[view][frame]; }
};

struct SynthConfig {
  int width = 64, height = 64;
  int views = 4;
  int frames = 1;
  int n_lights = 26;
  int probe_lat = 16, probe_lon = 32;
  bool mismatch = false;        // GT lighting at 4x probe resolution
  double displacement = 0.03;   // GT offset-field amplitude
  int offset_res = 33;          // GT offset grid
  double peak_shading = 0.9;    // lights normalized to this max
};

namespace synth_detail {

// Deterministic near-uniform directions (Fibonacci spiral).
inline std::vector<Vec3> fibonacci_directions(int n) {
  std::vector<Vec3> dirs(n);
  const double ga = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    double y = 1.0 - 2.0 * (i + 0.5) / n;
    double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    double phi = ga * i;
    dirs[i] = {r * std::cos(phi), y, r * std::sin(phi)};
  }
  return dirs;
}

// Procedural GT albedo over the (remapped) uv chart. Frequencies sit above
// the irradiance-representable band (cosine-lobe shading passes roughly
// spherical-harmonic degree <= 2), so lighting cannot absorb the pattern and
// the albedo/light split stays identifiable up to a global per-channel scale.
inline Vec3 albedo_pattern(Vec2 uv, uint64_t seed) {
  double p0 = 0.6 * static_cast<double>(seed % 7);
  double p1 = 0.9 * static_cast<double>(seed % 5);
  auto chan = [&](double fu, double fv, double phase, double base) {
    return clamp(base + 0.3 * std::sin(2 * kPi * fu * uv.x + phase) *
                            std::cos(2 * kPi * fv * uv.y + 0.7 * phase),
                 0.05, 0.95);
  };
  return {chan(5.0, 4.0, p0, 0.55), chan(4.0, 6.0, p1, 0.5), chan(6.0, 5.0, p0 + p1, 0.45)};
}

// Smooth GT per-pixel offset field.
inline UVField make_gt_offset(int res, double amplitude, uint64_t seed) {
  UVField f = field_init(res, res, 1, {0.0});
  double phase = 0.3 * static_cast<double>(seed % 11);
  for (int iy = 0; iy < res; ++iy)
    for (int ix = 0; ix < res; ++ix) {
      double u = static_cast<double>(ix) / (res - 1), v = static_cast<double>(iy) / (res - 1);
      f.node(ix, iy) =
          amplitude * std::sin(2 * kPi * u + phase) * std::sin(2 * kPi * v + 0.5 * phase);
    }
  return f;
}

// Rescale a mesh's uv chart into a sub-rectangle so multi-part scenes keep a
// globally injective uv map.
inline void remap_uvs(TriangleMesh& mesh, Vec2 origin, Vec2 scale) {
  for (auto& uv : mesh.vertex_uvs) uv = {origin.x + uv.x * scale.x, origin.y + uv.y * scale.y};
}

inline void append_mesh(TriangleMesh& dst, const TriangleMesh& src) {
  int off = static_cast<int>(dst.vertex_count());
  dst.vertex_positions.insert(dst.vertex_positions.end(), src.vertex_positions.begin(),
                              src.vertex_positions.end());
  dst.vertex_uvs.insert(dst.vertex_uvs.end(), src.vertex_uvs.begin(), src.vertex_uvs.end());
  for (const auto& f : src.face_indices)
    dst.face_indices.push_back({f[0] + off, f[1] + off, f[2] + off});
}

struct Recipe {
  TriangleMesh mesh;
  std::vector<Camera> cameras;
  std::vector<Pose> poses;
};

inline Recipe recipe_bumpy_plane(const SynthConfig& cfg) {
  Recipe r;
  r.mesh = make_plane_grid(16, 16, 2.0, 2.0);
  int views = std::max(1, cfg.views);
  for (int v = 0; v < views; ++v) {
    double a = 0.25 * v;
    r.cameras.push_back(Camera::look_at({0.8 * std::sin(a), 0.5 * std::sin(0.7 * a), 2.6},
                                        {0, 0, 0}, {0, 1, 0}, 45, cfg.width, cfg.height));
  }
  r.poses.resize(std::max(1, cfg.frames));
  for (int f = 0; f < static_cast<int>(r.poses.size()); ++f) r.poses[f].frame_index = f;
  return r;
}

inline Recipe recipe_sphere_boxes(const SynthConfig& cfg) {
  Recipe r;
  TriangleMesh sphere = make_icosphere(2, 0.55);
  remap_uvs(sphere, {0.02, 0.02}, {0.46, 0.96});
  TriangleMesh box_a = make_box({0.55, -0.35, 0.35}, {0.22, 0.22, 0.22});
  remap_uvs(box_a, {0.52, 0.02}, {0.46, 0.46});
  TriangleMesh box_b = make_box({-0.5, -0.4, -0.3}, {0.18, 0.18, 0.18});
  remap_uvs(box_b, {0.52, 0.52}, {0.46, 0.46});
  r.mesh = sphere;
  append_mesh(r.mesh, box_a);
  append_mesh(r.mesh, box_b);
  update_vertex_normals(r.mesh);
  int views = std::max(1, cfg.views);
  for (int v = 0; v < views; ++v) {
    double a = 2.0 * kPi * v / views;
    Vec3 eye{2.4 * std::sin(a), 0.9, 2.4 * std::cos(a)};
    r.cameras.push_back(Camera::look_at(eye, {0, -0.1, 0}, {0, 1, 0}, 42, cfg.width, cfg.height));
  }
  r.poses.resize(std::max(1, cfg.frames));
  for (int f = 0; f < static_cast<int>(r.poses.size()); ++f) r.poses[f].frame_index = f;
  return r;
}

inline Recipe recipe_rotating_object(const SynthConfig& cfg) {
  Recipe r;
  r.mesh = make_icosphere(2, 0.7);
  // single bone, full weight: rotation about y per frame
  r.mesh.bone_count = 1;
  r.mesh.skinning_weights.assign(r.mesh.vertex_count(), {1.0});
  int views = std::max(1, cfg.views);
  for (int v = 0; v < views; ++v) {
    double a = 0.4 * v;
    r.cameras.push_back(Camera::look_at({2.2 * std::sin(a), 0.5, 2.2 * std::cos(a)}, {0, 0, 0},
                                        {0, 1, 0}, 45, cfg.width, cfg.height));
  }
  int frames = std::max(2, cfg.frames);
  for (int f = 0; f < frames; ++f) {
    Pose pose;
    pose.frame_index = f;
    pose.bone_transforms = {
        {Mat3::rotation_axis_angle({0, 1, 0}, deg_to_rad(8.0 * f)), {0, 0, 0}}};
    r.poses.push_back(pose);
  }
  return r;
}

inline Recipe recipe_clothed_template(const SynthConfig& cfg) {
  Recipe r;
  r.mesh = make_plane_grid(16, 16, 2.0, 2.0);
  // two bones blended across x: left fixed, right waving
  r.mesh.bone_count = 2;
  r.mesh.skinning_weights.resize(r.mesh.vertex_count());
  for (size_t v = 0; v < r.mesh.vertex_count(); ++v) {
    double t = clamp(r.mesh.vertex_positions[v].x / 2.0 + 0.5, 0.0, 1.0);
    r.mesh.skinning_weights[v] = {1.0 - t, t};
  }
  int views = std::max(1, cfg.views);
  for (int v = 0; v < views; ++v) {
    double a = 0.3 * v;
    r.cameras.push_back(Camera::look_at({0.9 * std::sin(a), 0.4, 2.8}, {0, 0, 0}, {0, 1, 0}, 45,
                                        cfg.width, cfg.height));
  }
  int frames = std::max(2, cfg.frames);
  for (int f = 0; f < frames; ++f) {
    Pose pose;
    pose.frame_index = f;
    pose.bone_transforms = {
        RigidTransform::identity(),
        {Mat3::rotation_axis_angle({0, 1, 0}, deg_to_rad(6.0 * f)), {0, 0, 0.04 * f}}};
    r.poses.push_back(pose);
  }
  return r;
}

inline bool project_to_pixel(const Camera& cam, const Vec3& world, int& px, int& py, double& z) {
  Vec3 c = cam.world_to_camera.apply(world);
  if (c.z < kNearPlane) return false;
  double u = cam.fx * c.x / c.z + cam.cx;
  double v = cam.fy * c.y / c.z + cam.cy;
  px = static_cast<int>(std::floor(u));
  py = static_cast<int>(std::floor(v));
  z = c.z;
  return px >= 0 && px < cam.width && py >= 0 && py < cam.height;
}

}  // namespace synth_detail

inline double mesh_bbox_diagonal(const TriangleMesh& mesh) {
  Vec3 lo, hi;
  mesh.bounding_box(lo, hi);
  return length(hi - lo);
}

// Builds the full GT dataset with the artifact's own forward pipeline: posed
// mesh -> gbuffer -> offset displacement + O2N surface maps -> probe shading with BVH
// visibility; gt_rgb = gt_albedo (.) gt_shading by construction. Entirely
// deterministic per (recipe, config, seed).
inline SceneDataset synthesize_scene(const std::string& recipe, const SynthConfig& cfg,
                                     uint64_t seed) {
  using namespace synth_detail;
  Recipe r;
  if (recipe == "bumpy_plane")
    r = recipe_bumpy_plane(cfg);
  else if (recipe == "sphere_boxes")
    r = recipe_sphere_boxes(cfg);
  else if (recipe == "rotating_object")
    r = recipe_rotating_object(cfg);
  else if (recipe == "clothed_template")
    r = recipe_clothed_template(cfg);
  else
    throw ArgumentError("synthesize_scene: unknown recipe " + recipe);

  SceneDataset ds;
  ds.recipe = recipe;
  ds.seed = seed;
  ds.width = cfg.width;
  ds.height = cfg.height;
  ds.mismatch = cfg.mismatch;
  ds.mesh = std::move(r.mesh);
  ds.cameras = std::move(r.cameras);
  ds.poses = std::move(r.poses);
  ds.gt_offset = make_gt_offset(cfg.offset_res, cfg.displacement, seed);

  int lat = cfg.probe_lat, lon = cfg.probe_lon;
  if (cfg.mismatch) {
    lat *= 4;
    lon *= 4;
  }
  // Smooth area-light lobes rather than single-cell deltas: each light is a
  // spherical Gaussian, so the environment is representable and recoverable at
  // the probe resolution instead of aliasing into the albedo estimate.
  ds.gt_probes = probe_sphere(lat, lon, {0.02, 0.02, 0.02});
  constexpr double kLobeSharpness = 18.0;  // exp(k*(cos-1)), ~30 deg half width
  for (const Vec3& dir : fibonacci_directions(cfg.n_lights))
    for (int c = 0; c < ds.gt_probes.count(); ++c)
      ds.gt_probes.radiance[c] +=
          std::exp(kLobeSharpness * (dot(ds.gt_probes.directions[c], dir) - 1.0)) *
          Vec3{1.0, 1.0, 1.0};

  int n_views = ds.view_count(), n_frames = ds.frame_count();
  size_t np = static_cast<size_t>(cfg.width) * cfg.height;

  // per-frame deformed geometry and per-(view,frame) surface maps
  std::vector<TriangleMesh> posed(n_frames);
  std::vector<Bvh> bvhs;
  bvhs.reserve(n_frames);
  for (int f = 0; f < n_frames; ++f) {
    posed[f] = pose_mesh(ds.mesh, ds.poses[f]);
    bvhs.emplace_back(posed[f]);
  }
  double bbox_diag = mesh_bbox_diagonal(ds.mesh);

  ds.frames_by_view.assign(n_views, std::vector<FrameData>(n_frames));
  std::vector<std::vector<GBuffer>> gbs(n_views, std::vector<GBuffer>(n_frames));
  double max_shading = 0;
  for (int v = 0; v < n_views; ++v) {
    for (int f = 0; f < n_frames; ++f) {
      FrameData& fd = ds.frames_by_view[v][f];
      GBuffer& gb = gbs[v][f];
      gb = rasterize(posed[f], ds.cameras[v]);
      std::vector<Vec3> x_surf = surface_points(gb, ds.gt_offset, -1);
      SurfaceMaps maps = offsets_to_normals(x_surf, gb);
      // Occlusion rays originate at the rasterized mesh point: displaced
      // x_surf can sit inside the occluder mesh, which would blacken every
      // probe for pixels with inward offsets.
      VisibilityBuffer vis = visibility(gb.position, gb.mask, bvhs[f], ds.gt_probes,
                                        kDefaultVisibilityEps, bbox_diag);
      fd.mask = gb.mask;
      fd.shading = shading_image(gb, x_surf, maps.n_surf, ds.gt_probes, vis);
      fd.normal = Image(cfg.width, cfg.height, 3);
      fd.albedo = Image(cfg.width, cfg.height, 3);
      for (size_t pi = 0; pi < np; ++pi) {
        if (!gb.mask.bits[pi]) continue;
        int x = static_cast<int>(pi % cfg.width), y = static_cast<int>(pi / cfg.width);
        fd.normal.set_rgb(x, y, maps.n_surf[pi]);
        fd.albedo.set_rgb(x, y, albedo_pattern(gb.uv[pi], seed));
        for (int c = 0; c < 3; ++c)
          max_shading = std::max(max_shading, fd.shading.at(x, y, c));
      }
    }
  }

  // normalize lighting so the brightest shading sample hits peak_shading
  double light_scale = max_shading > 0 ? cfg.peak_shading / max_shading : 1.0;
  for (auto& L : ds.gt_probes.radiance) L *= light_scale;
  for (int v = 0; v < n_views; ++v) {
    for (int f = 0; f < n_frames; ++f) {
      FrameData& fd = ds.frames_by_view[v][f];
      for (auto& s : fd.shading.data) s *= light_scale;
      fd.rgb = Image(cfg.width, cfg.height, 3);
      for (size_t i = 0; i < fd.rgb.data.size(); ++i)
        fd.rgb.data[i] = fd.albedo.data[i] * fd.shading.data[i];
    }
  }

  // GT correspondences frame f -> f+1 via the shared material point
  for (int v = 0; v < n_views; ++v) {
    for (int f = 0; f < n_frames; ++f) {
      FrameData& fd = ds.frames_by_view[v][f];
      fd.corr.assign(np, -1);
      if (f + 1 >= n_frames) continue;
      const GBuffer& gb = gbs[v][f];
      const GBuffer& gb_next = gbs[v][f + 1];
      for (size_t pi = 0; pi < np; ++pi) {
        if (!gb.mask.bits[pi]) continue;
        int tri = gb.triangle_id[pi];
        const auto& face = posed[f + 1].face_indices[tri];
        const Vec3& b = gb.barycentric[pi];
        Vec3 next_pos = b.x * posed[f + 1].vertex_positions[face[0]] +
                        b.y * posed[f + 1].vertex_positions[face[1]] +
                        b.z * posed[f + 1].vertex_positions[face[2]];
        int px, py;
        double z;
        if (!synth_detail::project_to_pixel(ds.cameras[v], next_pos, px, py, z)) continue;
        size_t qi = gb_next.index(px, py);
        if (!gb_next.mask.bits[qi] || gb_next.triangle_id[qi] != tri) continue;
        if (std::abs(gb_next.depth[qi] - z) > 0.02 * z) continue;  // occluded
        fd.corr[pi] = static_cast<int>(qi);
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk dataset layout (PFM images + OBJ + field/probe containers + JSON
// meta written by the runner; see runner.hpp for the JSON side).
// ---------------------------------------------------------------------------

inline std::string frame_image_name(int view, int frame, const std::string& kind) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "v%02d_f%06d_%s.pfm", view, frame, kind.c_str());
  return buf;
}

// Mean per-channel L1 distance (x1e3) between corresponding pixels of
// consecutive normal maps.
inline double temporal_consistency(const std::vector<Image>& normal_maps,
                                   const std::vector<Mask>& masks,
                                   const std::vector<std::vector<int>>& correspondences) {
  if (normal_maps.size() < 2) throw ArgumentError("temporal_consistency: need >= 2 frames");
  if (masks.size() != normal_maps.size() || correspondences.size() != normal_maps.size())
    throw ArgumentError("temporal_consistency: sequence length mismatch");
  double sum = 0;
  size_t n = 0;
  for (size_t f = 0; f + 1 < normal_maps.size(); ++f) {
    const Image& a = normal_maps[f];
    const Image& b = normal_maps[f + 1];
    if (!a.same_shape(b) || correspondences[f].size() != a.pixel_count())
      throw ArgumentError("temporal_consistency: malformed correspondences at frame " +
                          std::to_string(f));
    for (size_t pi = 0; pi < a.pixel_count(); ++pi) {
      if (!masks[f].bits[pi]) continue;
      int qi = correspondences[f][pi];
      if (qi < 0) continue;
      for (int c = 0; c < a.channels; ++c) {
        sum += std::abs(a.data[pi * a.channels + c] - b.data[qi * b.channels + c]);
        ++n;
      }
    }
  }
  return n > 0 ? 1e3 * sum / static_cast<double>(n) : 0.0;
}

}  // namespace dis

#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "dis/adam.hpp"
#include "dis/deshade.hpp"
#include "dis/gradcheck.hpp"
#include "dis/synth.hpp"

namespace dis {

// Full learnable scene state: coarse vertex offsets, the four UV fields, and
// the probe sphere, plus persistent Adam moments per tensor.
struct SceneState {
  TriangleMesh base_mesh;
  VertexOffsets vertex_offsets;
  UVField offset_field, color_field, albedo_field, roughness_field;
  LightProbeSphere probes;
  BrdfMode mode = BrdfMode::kLiteral;
  double max_offset = 0;
  double edge_target = 0;
  ParamSet params;
};

struct FieldResolutions {
  int offset = 64;
  int color = 128;
  int albedo = 128;
  int roughness = 32;
};

inline SceneState init_scene_state(const TriangleMesh& mesh, const FieldResolutions& res,
                                   int probe_lat, int probe_lon, BrdfMode mode,
                                   double init_albedo = 0.5, double init_probe = 0.1) {
  SceneState s;
  s.base_mesh = mesh;
  if (s.base_mesh.vertex_normals.size() != s.base_mesh.vertex_count())
    update_vertex_normals(s.base_mesh);
  s.mode = mode;
  s.max_offset = 0.05 * mesh_bbox_diagonal(mesh);

  double edge_sum = 0;
  size_t edge_n = 0;
  for (const auto& f : mesh.face_indices)
    for (int k = 0; k < 3; ++k) {
      edge_sum += length(mesh.vertex_positions[f[k]] - mesh.vertex_positions[f[(k + 1) % 3]]);
      ++edge_n;
    }
  s.edge_target = edge_n > 0 ? edge_sum / static_cast<double>(edge_n) : 0.0;

  s.vertex_offsets.values.assign(mesh.vertex_count(), 0.0);
  s.offset_field = field_init(res.offset, res.offset, 1, {0.0},
                              std::make_pair(-s.max_offset, s.max_offset));
  s.color_field = field_init(res.color, res.color, 3, {init_albedo, init_albedo, init_albedo},
                             std::make_pair(0.0, 1.0));
  s.albedo_field = field_init(res.albedo, res.albedo, 3, {init_albedo, init_albedo, init_albedo},
                              std::make_pair(0.0, 1.0));
  // Diffuse-dominant start: the additive specular term is degenerate with a
  // gray albedo shift under static lighting, so any roughness above the floor
  // is silently absorbed into a constant albedo offset. Start at the clamp
  // floor and let roughness grow only when the image evidence demands it.
  s.roughness_field = field_init(res.roughness, res.roughness, 1, {0.01},
                                 std::make_pair(0.01, 1.0));
  s.probes = probe_sphere(probe_lat, probe_lon, {init_probe, init_probe, init_probe});

  auto add = [&](const std::string& name, size_t n,
                 std::optional<std::pair<double, double>> range) {
    Param p(n, 0.0);
    p.project_range = range;
    s.params.params.emplace(name, std::move(p));
  };
  add("vertex_offsets", mesh.vertex_count(), {{-s.max_offset, s.max_offset}});
  add("offset_field", s.offset_field.values.size(), {{-s.max_offset, s.max_offset}});
  add("color_field", s.color_field.values.size(), {{0.0, 1.0}});
  add("albedo_field", s.albedo_field.values.size(), {{0.0, 1.0}});
  add("roughness_field", s.roughness_field.values.size(), {{0.01, 1.0}});
  add("probes", static_cast<size_t>(s.probes.count()) * 3, {{0.0, 1e9}});
  return s;
}

struct StageConfig {
  int epochs = 50;
  double lr_fields = 1e-2;
  double lr_offsets = 1e-3;
  LossWeights weights;
  int warmup_epochs = 2;   // I_GT serves as the prior's color condition
  int prior_refresh = 1;   // epochs between prior re-queries
  NormalPriorConfig prior;
  std::string deshade_kind = "analytic";  // analytic | identity | external
  std::string deshade_directory;
  double shading_floor = kDefaultShadingFloor;
  int k_vis = 10;
  bool use_o2n = true;  // ablation switch: false renders with base-mesh normals
  bool train_vertex_offsets = true;
};

// One JSON line per epoch; the runner appends these to the metric log.
using StageLogger = std::function<void(const std::string&)>;

namespace stage_detail {

inline void adam_update(SceneState& s, const std::string& name, std::vector<double>& values,
                        const std::vector<double>& grads, double lr) {
  Param& p = s.params.at(name);
  if (p.values.size() != values.size())
    throw StateError("adam_update: parameter shape drifted for " + name);
  p.values = values;
  AdamConfig cfg;
  cfg.lr = lr;
  adam_step(p, grads, cfg);
  values = p.values;
}

inline std::string epoch_log_line(const std::string& stage, int epoch,
                                  const std::vector<std::pair<std::string, double>>& kv) {
  std::string line = "{\"stage\":\"" + stage + "\",\"epoch\":" + std::to_string(epoch);
  char buf[64];
  for (const auto& [k, v] : kv) {
    std::snprintf(buf, sizeof(buf), ",\"%s\":%.17g", k.c_str(), v);
    line += buf;
  }
  line += "}";
  return line;
}

// Geometry forward for one (view, frame): gbuffer plus offset-displacement
// and offset-to-normal maps.
struct GeomForward {
  GBuffer gb;
  std::vector<double> cached_offsets;
  std::vector<Vec3> x_surf;
  O2nCache cache;
  SurfaceMaps maps;
};

inline GeomForward forward_geometry(const SceneState& s, const TriangleMesh& posed,
                                    const Camera& camera, bool use_o2n) {
  GeomForward f;
  f.gb = rasterize(posed, camera);
  if (use_o2n) {
    f.x_surf = surface_points(f.gb, s.offset_field, -1, &f.cached_offsets);
    f.maps = offsets_to_normals(f.x_surf, f.gb, kDefaultDepthTau, &f.cache);
  } else {
    f.x_surf = f.gb.position;
    f.maps.width = f.gb.width;
    f.maps.height = f.gb.height;
    f.maps.x_surf = f.x_surf;
    f.maps.n_surf = f.gb.normal;
    f.maps.validity = f.gb.mask;
  }
  return f;
}

inline Image normals_to_image(const std::vector<Vec3>& n_surf, const Mask& mask) {
  Image img(mask.width, mask.height, 3);
  for (size_t pi = 0; pi < n_surf.size(); ++pi) {
    if (!mask.bits[pi]) continue;
    img.data[pi * 3] = n_surf[pi].x;
    img.data[pi * 3 + 1] = n_surf[pi].y;
    img.data[pi * 3 + 2] = n_surf[pi].z;
  }
  return img;
}

inline Mask mask_and(const Mask& a, const Mask& b) {
  Mask out(a.width, a.height);
  for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] && b.bits[i];
  return out;
}

// Image sampled from a uv field over the gbuffer; optional gradient scatter.
inline Image sample_field_image(const UVField& field, const GBuffer& gb) {
  Image img(gb.width, gb.height, field.channels);
  for (size_t pi = 0; pi < gb.uv.size(); ++pi) {
    if (!gb.mask.bits[pi]) continue;
    auto v = field_query(field, gb.uv[pi]);
    for (int c = 0; c < field.channels; ++c) img.data[pi * field.channels + c] = v[c];
  }
  return img;
}

inline void scatter_field_image_grad(const UVField& field, const GBuffer& gb,
                                     const Image& grad_img, FieldGradient& grad) {
  std::vector<double> g(field.channels);
  for (size_t pi = 0; pi < gb.uv.size(); ++pi) {
    if (!gb.mask.bits[pi]) continue;
    bool any = false;
    for (int c = 0; c < field.channels; ++c) {
      g[c] = grad_img.data[pi * field.channels + c];
      any = any || g[c] != 0.0;
    }
    if (any) field_query_backward(field, gb.uv[pi], -1, g, grad);
  }
}

// w_mse * MSE + w_ssim * (1 - SSIM), with the SSIM term skipped below the
// 11x11 window size. Returns the combined gradient w.r.t. pred.
inline LossResult combined_image_loss(const Image& pred, const Image& target, const Mask& mask,
                                      const LossWeights& w) {
  LossResult mse = loss_mse(pred, target, mask);
  LossResult out;
  out.value = w.w_mse * mse.value;
  out.grad_pred = mse.grad_pred;
  for (auto& g : out.grad_pred.data) g *= w.w_mse;
  if (w.w_ssim > 0 && pred.width >= 11 && pred.height >= 11) {
    LossResult ssim = loss_ssim(pred, target, mask);
    out.value += w.w_ssim * ssim.value;
    for (size_t i = 0; i < out.grad_pred.data.size(); ++i)
      out.grad_pred.data[i] += w.w_ssim * ssim.grad_pred.data[i];
  }
  return out;
}

// Losses run on linear-light values clamped to [0,1]; gradients are gated on
// the unclamped pixels.
inline Image clamp01(const Image& img) {
  Image out = img;
  for (auto& v : out.data) v = clamp(v, 0.0, 1.0);
  return out;
}

inline void gate_clamped(const Image& raw, Image& grad) {
  for (size_t i = 0; i < raw.data.size(); ++i)
    if (raw.data[i] < 0.0 || raw.data[i] > 1.0) grad.data[i] = 0.0;
}

// L_mesh gradient projected onto the vertex-offset direction. The gradient is
// anchored at the rest template (base-mesh gradient subtracted): a scalar
// edge target exerts a constant pull on any irregular mesh, and anchoring
// turns the regularizer into a penalty on deviation from the rest state
// instead of a drift toward the global mean edge length.
inline void add_mesh_reg_grad(const SceneState& s, const MeshRegularizerResult& reg,
                              const MeshRegularizerResult& reg_rest, const LossWeights& w,
                              std::vector<double>& voff_g) {
  for (size_t vi = 0; vi < voff_g.size(); ++vi) {
    Vec3 g = w.w_edge * (reg.grad_edge[vi] - reg_rest.grad_edge[vi]) +
             w.w_normal * (reg.grad_normal[vi] - reg_rest.grad_normal[vi]) +
             w.w_laplacian * (reg.grad_laplacian[vi] - reg_rest.grad_laplacian[vi]);
    voff_g[vi] += dot(g, s.base_mesh.vertex_normals[vi]);
  }
}

// d(posed vertex)/d(l_v) direction: sum_j w_j R_j applied to the base normal.
inline std::vector<Vec3> offset_directions(const TriangleMesh& base, const Pose& pose) {
  std::vector<Vec3> dirs(base.vertex_count());
  int joints = static_cast<int>(pose.bone_transforms.size());
  for (size_t v = 0; v < base.vertex_count(); ++v) {
    const Vec3& n = base.vertex_normals[v];
    if (joints == 0) {
      dirs[v] = n;
      continue;
    }
    Vec3 d{0, 0, 0};
    for (int j = 0; j < joints; ++j) {
      double w = base.skinning_weights[v][j];
      if (w != 0) d += w * pose.bone_transforms[j].apply_vector(n);
    }
    dirs[v] = d;
  }
  return dirs;
}

}  // namespace stage_detail

// Stage 1: geometry + color. The normal-map loss (against the prior) drives
// the offset field and vertex offsets through the O2N chain; the color field
// fits I_GT directly; mesh regularizers act on the deformed template.
inline void stage1(SceneState& s, const SceneDataset& ds, const StageConfig& cfg,
                   const StageLogger& log = {}) {
  using namespace stage_detail;
  cfg.weights.validate();
  int n_views = ds.view_count(), n_frames = ds.frame_count();
  size_t nv = s.base_mesh.vertex_count();
  std::vector<std::vector<Image>> priors(n_views, std::vector<Image>(n_frames));
  MeshRegularizerResult reg_rest = mesh_regularizers(s.base_mesh, s.edge_target);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    TriangleMesh deformed = apply_vertex_offsets(s.base_mesh, s.vertex_offsets);
    MeshRegularizerResult reg = mesh_regularizers(deformed, s.edge_target);

    FieldGradient offset_g = FieldGradient::zeros_like(s.offset_field);
    FieldGradient color_g = FieldGradient::zeros_like(s.color_field);
    std::vector<double> voff_g(nv, 0.0);
    double normal_loss = 0, color_loss = 0;

    for (int f = 0; f < n_frames; ++f) {
      TriangleMesh posed;
      try {
        posed = pose_mesh(deformed, ds.poses[f]);
      } catch (const std::exception& e) {
        throw StateError("stage1: frame " + std::to_string(f) + ": " + e.what());
      }
      std::vector<Vec3> l_dirs = offset_directions(s.base_mesh, ds.poses[f]);
      for (int v = 0; v < n_views; ++v) {
        const FrameData& fd = ds.at(v, f);
        GeomForward fwd = forward_geometry(s, posed, ds.cameras[v], cfg.use_o2n);
        Mask mask = mask_and(fwd.gb.mask, fd.mask);
        Image n_img = normals_to_image(fwd.maps.n_surf, fwd.gb.mask);

        // prior refresh cadence; during warmup I_GT is the provider's color
        // condition (the built-in providers do not consume it). Each refresh
        // re-queries the provider on a fresh stream — a temporally unstable
        // prior answers differently every query, and averaging those answers
        // over epochs is what pulls the fit toward the underlying surface.
        int stream = (v * n_frames + f) + epoch * n_views * n_frames;
        if (priors[v][f].width == 0 || epoch % std::max(1, cfg.prior_refresh) == 0) {
          try {
            priors[v][f] = normal_prior(n_img, mask, stream, cfg.prior, &fd.normal);
          } catch (const std::exception& e) {
            throw StateError("stage1: frame " + std::to_string(f) + " view " + std::to_string(v) +
                             ": " + e.what());
          }
        }

        // normal supervision on (n+1)/2 encoded maps so SSIM sees [0,1]
        Image enc_pred = encode_normal_map(n_img);
        Image enc_prior = encode_normal_map(priors[v][f]);
        LossResult nl = combined_image_loss(enc_pred, enc_prior, mask, cfg.weights);
        normal_loss += nl.value;
        size_t np = fwd.gb.mask.bits.size();
        std::vector<Vec3> grad_n(np, Vec3{0, 0, 0});
        for (size_t pi = 0; pi < np; ++pi) {
          if (!mask.bits[pi]) continue;
          grad_n[pi] = 0.5 * Vec3{nl.grad_pred.data[pi * 3], nl.grad_pred.data[pi * 3 + 1],
                                  nl.grad_pred.data[pi * 3 + 2]};
        }
        if (cfg.use_o2n) {
          O2nGradients og = o2n_backward(posed, fwd.gb, s.offset_field, -1, fwd.x_surf,
                                         fwd.cached_offsets, fwd.cache, grad_n);
          offset_g.add(og.d_offset_field);
          if (cfg.train_vertex_offsets) {
            for (size_t vi = 0; vi < nv; ++vi)
              voff_g[vi] += dot(og.d_vertex_positions[vi], l_dirs[vi]);
          }
        }
        // !use_o2n: base-mesh normals carry no offset dependence (vertex
        // normal recomputation is detached); only regularizers train offsets

        // color field vs I_GT
        Image color_img = sample_field_image(s.color_field, fwd.gb);
        LossResult cl = combined_image_loss(color_img, clamp01(fd.rgb), mask, cfg.weights);
        color_loss += cl.value;
        scatter_field_image_grad(s.color_field, fwd.gb, cl.grad_pred, color_g);
      }
    }

    double mesh_loss = cfg.weights.w_edge * reg.edge_loss +
                       cfg.weights.w_normal * reg.normal_consistency_loss +
                       cfg.weights.w_laplacian * reg.laplacian_loss;
    if (cfg.train_vertex_offsets) add_mesh_reg_grad(s, reg, reg_rest, cfg.weights, voff_g);

    if (cfg.use_o2n)
      adam_update(s, "offset_field", s.offset_field.values, offset_g.base, cfg.lr_fields);
    adam_update(s, "color_field", s.color_field.values, color_g.base, cfg.lr_fields);
    if (cfg.train_vertex_offsets)
      adam_update(s, "vertex_offsets", s.vertex_offsets.values, voff_g, cfg.lr_offsets);

    if (log)
      log(epoch_log_line("stage1", epoch,
                         {{"normal_loss", normal_loss},
                          {"color_loss", color_loss},
                          {"mesh_loss", mesh_loss}}));
  }
}

// Stage 2: freeze geometry and color; fit albedo, roughness, and probe
// radiance against I_GT through the physically based render. Visibility is
// built once per frame (geometry is static here).
inline void stage2(SceneState& s, const SceneDataset& ds, const StageConfig& cfg,
                   const StageLogger& log = {}) {
  using namespace stage_detail;
  cfg.weights.validate();
  int n_views = ds.view_count(), n_frames = ds.frame_count();

  TriangleMesh deformed = apply_vertex_offsets(s.base_mesh, s.vertex_offsets);
  double bbox_diag = mesh_bbox_diagonal(s.base_mesh);
  std::vector<TriangleMesh> posed(n_frames);
  std::vector<std::vector<GeomForward>> fwds(n_views);
  std::vector<std::vector<VisibilityBuffer>> vis(n_views);
  for (int f = 0; f < n_frames; ++f) posed[f] = pose_mesh(deformed, ds.poses[f]);
  for (int v = 0; v < n_views; ++v) {
    fwds[v].resize(n_frames);
    vis[v].resize(n_frames);
    for (int f = 0; f < n_frames; ++f) {
      fwds[v][f] = forward_geometry(s, posed[f], ds.cameras[v], cfg.use_o2n);
      Bvh bvh(posed[f]);
      vis[v][f] = visibility(fwds[v][f].gb.position, fwds[v][f].gb.mask, bvh, s.probes,
                             kDefaultVisibilityEps, bbox_diag);
    }
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    FieldGradient albedo_g = FieldGradient::zeros_like(s.albedo_field);
    FieldGradient rough_g = FieldGradient::zeros_like(s.roughness_field);
    std::vector<double> probe_g(static_cast<size_t>(s.probes.count()) * 3, 0.0);
    double image_loss = 0;

    for (int v = 0; v < n_views; ++v) {
      for (int f = 0; f < n_frames; ++f) {
        const GeomForward& fwd = fwds[v][f];
        const FrameData& fd = ds.at(v, f);
        Mask mask = mask_and(fwd.gb.mask, fd.mask);
        Image albedo_img = sample_field_image(s.albedo_field, fwd.gb);
        Image rough_img = sample_field_image(s.roughness_field, fwd.gb);

        RenderInputs in;
        in.gbuffer = &fwd.gb;
        in.x_surf = &fwd.x_surf;
        in.n_surf = &fwd.maps.n_surf;
        in.albedo = &albedo_img;
        in.roughness = &rough_img;
        in.probes = &s.probes;
        in.vis = &vis[v][f];
        in.camera_position = ds.cameras[v].position();
        in.mode = s.mode;
        Image rendered = render_pbr(in);

        LossResult il = combined_image_loss(clamp01(rendered), clamp01(fd.rgb), mask, cfg.weights);
        image_loss += il.value;
        gate_clamped(rendered, il.grad_pred);
        RenderGradients rg = render_pbr_backward(in, il.grad_pred);
        scatter_field_image_grad(s.albedo_field, fwd.gb, rg.d_albedo, albedo_g);
        scatter_field_image_grad(s.roughness_field, fwd.gb, rg.d_roughness, rough_g);
        for (int p = 0; p < s.probes.count(); ++p) {
          probe_g[p * 3] += rg.d_probes[p].x;
          probe_g[p * 3 + 1] += rg.d_probes[p].y;
          probe_g[p * 3 + 2] += rg.d_probes[p].z;
        }
      }
    }

    // Warmup epochs fit probes only, against the constant albedo init. A
    // spatially uniform albedo makes the lighting estimate unique up to a
    // per-channel scale (the albedo pattern is zero-mean at the shading
    // scale), which prevents the joint fit from absorbing smooth shading
    // error into the albedo field.
    bool fields_live = epoch >= cfg.warmup_epochs;
    if (fields_live) {
      adam_update(s, "albedo_field", s.albedo_field.values, albedo_g.base, cfg.lr_fields);
      adam_update(s, "roughness_field", s.roughness_field.values, rough_g.base, cfg.lr_fields);
    }
    std::vector<double> probe_values(probe_g.size());
    for (int p = 0; p < s.probes.count(); ++p) {
      probe_values[p * 3] = s.probes.radiance[p].x;
      probe_values[p * 3 + 1] = s.probes.radiance[p].y;
      probe_values[p * 3 + 2] = s.probes.radiance[p].z;
    }
    adam_update(s, "probes", probe_values, probe_g, cfg.lr_fields);
    for (int p = 0; p < s.probes.count(); ++p)
      s.probes.radiance[p] = {probe_values[p * 3], probe_values[p * 3 + 1],
                              probe_values[p * 3 + 2]};

    if (log) log(epoch_log_line("stage2", epoch, {{"image_loss", image_loss}}));
  }
}

// Stage 3: joint refinement with the de-shading feedback loop. The de-shaded
// albedo supervises the albedo field (confidence-weighted); the render with
// the de-shaded albedo supervises geometry (offset field + vertex offsets),
// roughness, and probes. Color stays frozen; visibility refreshes every
// k_vis epochs because geometry moves.
inline void stage3(SceneState& s, const SceneDataset& ds, const StageConfig& cfg,
                   const StageLogger& log = {}) {
  using namespace stage_detail;
  cfg.weights.validate();
  int n_views = ds.view_count(), n_frames = ds.frame_count();
  size_t nv = s.base_mesh.vertex_count();
  double bbox_diag = mesh_bbox_diagonal(s.base_mesh);
  std::vector<std::vector<VisibilityBuffer>> vis(n_views, std::vector<VisibilityBuffer>(n_frames));
  MeshRegularizerResult reg_rest = mesh_regularizers(s.base_mesh, s.edge_target);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    TriangleMesh deformed = apply_vertex_offsets(s.base_mesh, s.vertex_offsets);
    MeshRegularizerResult reg = mesh_regularizers(deformed, s.edge_target);
    bool refresh_vis = epoch % std::max(1, cfg.k_vis) == 0;

    FieldGradient offset_g = FieldGradient::zeros_like(s.offset_field);
    FieldGradient albedo_g = FieldGradient::zeros_like(s.albedo_field);
    FieldGradient rough_g = FieldGradient::zeros_like(s.roughness_field);
    std::vector<double> probe_g(static_cast<size_t>(s.probes.count()) * 3, 0.0);
    std::vector<double> voff_g(nv, 0.0);
    double image_loss = 0, albedo_loss = 0;

    for (int f = 0; f < n_frames; ++f) {
      TriangleMesh posed = pose_mesh(deformed, ds.poses[f]);
      std::vector<Vec3> l_dirs = offset_directions(s.base_mesh, ds.poses[f]);
      Bvh bvh(posed);
      for (int v = 0; v < n_views; ++v) {
        const FrameData& fd = ds.at(v, f);
        GeomForward fwd = forward_geometry(s, posed, ds.cameras[v], cfg.use_o2n);
        if (refresh_vis || vis[v][f].width == 0)
          vis[v][f] = visibility(fwd.gb.position, fwd.gb.mask, bvh, s.probes, kDefaultVisibilityEps,
                                 bbox_diag);
        Mask mask = mask_and(fwd.gb.mask, fd.mask);

        Image albedo_img = sample_field_image(s.albedo_field, fwd.gb);
        Image rough_img = sample_field_image(s.roughness_field, fwd.gb);
        Image shading =
            shading_image(fwd.gb, fwd.x_surf, fwd.maps.n_surf, s.probes, vis[v][f]);

        // route (5): de-shaded albedo supervises the albedo field. The
        // analytic provider inverts the full photometric model under the
        // current lighting estimate: the specular contribution (render with
        // zero albedo) comes off the observation first, then the diffuse part
        // divides by its shading, so a render with albedo_hat reproduces I_GT
        // exactly wherever the inverse is trusted.
        Image albedo_hat = albedo_img;
        Mask conf = mask;
        if (cfg.deshade_kind == "analytic") {
          Image zero_albedo(fwd.gb.width, fwd.gb.height, 3);
          RenderInputs spec_in;
          spec_in.gbuffer = &fwd.gb;
          spec_in.x_surf = &fwd.x_surf;
          spec_in.n_surf = &fwd.maps.n_surf;
          spec_in.albedo = &zero_albedo;
          spec_in.roughness = &rough_img;
          spec_in.probes = &s.probes;
          spec_in.vis = &vis[v][f];
          spec_in.camera_position = ds.cameras[v].position();
          spec_in.mode = s.mode;
          Image specular = render_pbr(spec_in);
          Image request = clamp01(fd.rgb);
          for (size_t i = 0; i < request.data.size(); ++i) request.data[i] -= specular.data[i];
          Image diffuse_shading = shading;
          if (s.mode == BrdfMode::kMicrofacet)
            for (auto& v_ : diffuse_shading.data) v_ /= kPi;
          DeshadeResult dr = deshade_analytic(request, diffuse_shading, mask, cfg.shading_floor);
          albedo_hat = std::move(dr.albedo);
          conf = mask_and(mask, dr.confidence);
          // The inverse is trusted only where it is well-conditioned AND lands
          // inside the albedo range: a clamped channel means the current
          // materials/lighting cannot explain that pixel, and feeding the
          // clamped value into the render would open a residual the image loss
          // can never close. Such pixels fall back to the current albedo
          // estimate and are excluded from the albedo supervision.
          for (size_t pi = 0; pi < mask.bits.size(); ++pi) {
            if (!mask.bits[pi]) continue;
            bool clamped = false;
            for (int c = 0; c < 3 && !clamped; ++c) {
              double sh = diffuse_shading.data[pi * 3 + c];
              double rq = request.data[pi * 3 + c];
              clamped = rq < 0.0 || (sh > 0 && rq > sh);
            }
            if (clamped) conf.bits[pi] = 0;
            if (!conf.bits[pi])
              for (int c = 0; c < 3; ++c)
                albedo_hat.data[pi * 3 + c] = albedo_img.data[pi * 3 + c];
          }
        } else if (cfg.deshade_kind == "external") {
          try {
            albedo_hat = deshade_external(cfg.deshade_directory, f, fwd.gb.width, fwd.gb.height);
          } catch (const std::exception& e) {
            throw StateError("stage3: frame " + std::to_string(f) + ": " + e.what());
          }
        } else if (cfg.deshade_kind != "identity") {
          throw ConfigurationError("stage3: unknown deshade provider " + cfg.deshade_kind);
        }
        LossWeights albedo_w = cfg.weights;
        albedo_w.w_mse *= cfg.weights.w_albedo_prior;
        albedo_w.w_ssim *= cfg.weights.w_albedo_prior;
        LossResult al = combined_image_loss(albedo_img, albedo_hat, conf, albedo_w);
        albedo_loss += al.value;
        scatter_field_image_grad(s.albedo_field, fwd.gb, al.grad_pred, albedo_g);

        // route (4): render with the de-shaded albedo; image loss updates
        // geometry, roughness, probes (albedo_hat detached)
        RenderInputs in;
        in.gbuffer = &fwd.gb;
        in.x_surf = &fwd.x_surf;
        in.n_surf = &fwd.maps.n_surf;
        in.albedo = &albedo_hat;
        in.roughness = &rough_img;
        in.probes = &s.probes;
        in.vis = &vis[v][f];
        in.camera_position = ds.cameras[v].position();
        in.mode = s.mode;
        Image rendered = render_pbr(in);
        LossResult il = combined_image_loss(clamp01(rendered), clamp01(fd.rgb), mask, cfg.weights);
        image_loss += il.value;
        gate_clamped(rendered, il.grad_pred);
        RenderGradients rg = render_pbr_backward(in, il.grad_pred);
        scatter_field_image_grad(s.roughness_field, fwd.gb, rg.d_roughness, rough_g);
        for (int p = 0; p < s.probes.count(); ++p) {
          probe_g[p * 3] += rg.d_probes[p].x;
          probe_g[p * 3 + 1] += rg.d_probes[p].y;
          probe_g[p * 3 + 2] += rg.d_probes[p].z;
        }
        if (cfg.use_o2n) {
          O2nGradients og = o2n_backward(posed, fwd.gb, s.offset_field, -1, fwd.x_surf,
                                         fwd.cached_offsets, fwd.cache, rg.d_n_surf);
          offset_g.add(og.d_offset_field);
          if (cfg.train_vertex_offsets)
            for (size_t vi = 0; vi < nv; ++vi)
              voff_g[vi] += dot(og.d_vertex_positions[vi], l_dirs[vi]);
        }
      }
    }

    if (cfg.train_vertex_offsets) add_mesh_reg_grad(s, reg, reg_rest, cfg.weights, voff_g);

    // Geometry moves at the conservative offsets rate here: stage 1 already
    // acquired the displacement signal (field rate); stage 3 only refines it
    // against a photometric signal that is weak along several normal
    // directions, so a fields-rate step would mostly integrate noise.
    if (cfg.use_o2n)
      adam_update(s, "offset_field", s.offset_field.values, offset_g.base, cfg.lr_offsets);
    adam_update(s, "albedo_field", s.albedo_field.values, albedo_g.base, cfg.lr_fields);
    adam_update(s, "roughness_field", s.roughness_field.values, rough_g.base, cfg.lr_fields);
    if (cfg.train_vertex_offsets)
      adam_update(s, "vertex_offsets", s.vertex_offsets.values, voff_g, cfg.lr_offsets);
    std::vector<double> probe_values(probe_g.size());
    for (int p = 0; p < s.probes.count(); ++p) {
      probe_values[p * 3] = s.probes.radiance[p].x;
      probe_values[p * 3 + 1] = s.probes.radiance[p].y;
      probe_values[p * 3 + 2] = s.probes.radiance[p].z;
    }
    adam_update(s, "probes", probe_values, probe_g, cfg.lr_fields);
    for (int p = 0; p < s.probes.count(); ++p)
      s.probes.radiance[p] = {probe_values[p * 3], probe_values[p * 3 + 1],
                              probe_values[p * 3 + 2]};

    if (log)
      log(epoch_log_line("stage3", epoch,
                         {{"image_loss", image_loss}, {"albedo_loss", albedo_loss}}));
  }
}

}  // namespace dis

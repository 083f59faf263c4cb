#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dis/field.hpp"
#include "dis/losses.hpp"
#include "dis/mesh.hpp"
#include "dis/o2n.hpp"
#include "dis/raster.hpp"
#include "dis/shade.hpp"

namespace dis {

// A scalar function with its analytic gradient at x0. gradcheck runs central
// finite differences on every coordinate of x0 and reports the worst
// relative error against the analytic values.
struct FdProblem {
  std::function<double(const std::vector<double>&)> forward;
  std::vector<double> x0;
  std::vector<double> analytic_grad;
  double step = 1e-6;
};

struct GradcheckReport {
  double max_rel_err = 0;
  bool pass = false;
  double tolerance = 0;
};

inline GradcheckReport run_fd_check(const FdProblem& prob, double tolerance) {
  GradcheckReport rep;
  rep.tolerance = tolerance;
  std::vector<double> x = prob.x0;
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + prob.step;
    double fp = prob.forward(x);
    x[i] = keep - prob.step;
    double fm = prob.forward(x);
    x[i] = keep;
    double fd = (fp - fm) / (2.0 * prob.step);
    double a = prob.analytic_grad[i];
    double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
  }
  rep.pass = rep.max_rel_err <= tolerance;
  return rep;
}

namespace gradcheck_detail {

inline std::vector<double> random_vector(std::mt19937_64& rng, size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Deterministic per-pixel weights so the scalar loss exercises every lane.
inline double pixel_weight(size_t i, int c = 0) {
  return 0.3 + 0.1 * std::sin(0.7 * static_cast<double>(i) + 0.5 * c);
}

// Small UV-mapped grid patch in the z=0 plane, facing +z.
inline TriangleMesh make_grid_patch(int nx, int ny, double size) {
  TriangleMesh mesh;
  for (int y = 0; y <= ny; ++y)
    for (int x = 0; x <= nx; ++x) {
      double u = static_cast<double>(x) / nx, v = static_cast<double>(y) / ny;
      mesh.vertex_positions.push_back({(u - 0.5) * size, (v - 0.5) * size, 0.0});
      mesh.vertex_uvs.push_back({u, v});
    }
  auto vid = [&](int x, int y) { return y * (nx + 1) + x; };
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      // winding chosen so face normals point toward +z
      mesh.face_indices.push_back({vid(x, y), vid(x + 1, y), vid(x + 1, y + 1)});
      mesh.face_indices.push_back({vid(x, y), vid(x + 1, y + 1), vid(x, y + 1)});
    }
  update_vertex_normals(mesh);
  return mesh;
}

inline Camera patch_camera(int res, double size) {
  return Camera::look_at({0, 0, 2.5}, {0, 0, 0}, {0, 1, 0},
                         2.0 * rad_to_deg(std::atan2(0.75 * size, 2.5)), res, res);
}

// field nodes -> weighted sum of clamped query outputs
inline FdProblem problem_field_query(uint64_t seed) {
  std::mt19937_64 rng(seed);
  UVField field = field_init(8, 8, 3, {0, 0, 0});
  field.values = random_vector(rng, field.values.size(), -1.0, 1.0);
  std::vector<Vec2> uvs;
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int i = 0; i < 20; ++i) uvs.push_back({d(rng), d(rng)});
  FdProblem prob;
  // the loss is piecewise linear in the node values and the perturbation never
  // crosses a bilinear cell boundary, so a large step is exact and drowns the
  // cancellation noise of the summed forward value
  prob.step = 1e-3;
  prob.x0 = field.values;
  prob.forward = [field, uvs](const std::vector<double>& x) mutable {
    field.values = x;
    double sum = 0;
    for (size_t q = 0; q < uvs.size(); ++q) {
      auto out = field_query(field, uvs[q]);
      for (int c = 0; c < 3; ++c) sum += pixel_weight(q, c) * out[c];
    }
    return sum;
  };
  FieldGradient grad = FieldGradient::zeros_like(field);
  for (size_t q = 0; q < uvs.size(); ++q)
    field_query_backward(field, uvs[q], -1,
                         {pixel_weight(q, 0), pixel_weight(q, 1), pixel_weight(q, 2)}, grad);
  prob.analytic_grad = grad.base;
  return prob;
}

struct O2nScene {
  TriangleMesh mesh;
  Camera camera;
  GBuffer gb;
  UVField offset_field;
  std::vector<Vec3> target_normals;
};

inline O2nScene make_o2n_scene(uint64_t seed, int res = 16) {
  std::mt19937_64 rng(seed);
  O2nScene s;
  s.mesh = make_grid_patch(4, 4, 2.0);
  s.camera = patch_camera(res, 2.0);
  s.gb = rasterize(s.mesh, s.camera);
  s.offset_field = field_init(8, 8, 1, {0.0});
  s.offset_field.values = random_vector(rng, s.offset_field.values.size(), -0.05, 0.05);
  size_t np = static_cast<size_t>(res) * res;
  s.target_normals.resize(np);
  std::uniform_real_distribution<double> d(-0.3, 0.3);
  for (auto& n : s.target_normals) n = normalize(Vec3{d(rng), d(rng), 1.0});
  return s;
}

inline double o2n_loss(const O2nScene& s, const UVField& field) {
  auto x_surf = surface_points(s.gb, field, -1);
  auto maps = offsets_to_normals(x_surf, s.gb);
  double sum = 0;
  for (size_t pi = 0; pi < x_surf.size(); ++pi) {
    if (!s.gb.mask.bits[pi]) continue;
    sum += length_squared(maps.n_surf[pi] - s.target_normals[pi]);
  }
  return sum;
}

// offset-field nodes -> sum ||n_surf - n_target||^2 through the full
// displacement + offset-to-normal chain
inline FdProblem problem_o2n_field(uint64_t seed) {
  O2nScene s = make_o2n_scene(seed);
  FdProblem prob;
  // smooth chain (cross products + normalization) whose stencil decisions are
  // fixed by the frozen gbuffer: a moderate step balances the O(step^2)
  // truncation against roundoff in the pixel-summed loss
  prob.step = 1e-5;
  prob.x0 = s.offset_field.values;
  prob.forward = [s](const std::vector<double>& x) mutable {
    s.offset_field.values = x;
    return o2n_loss(s, s.offset_field);
  };
  std::vector<double> offsets;
  auto x_surf = surface_points(s.gb, s.offset_field, -1, &offsets);
  O2nCache cache;
  auto maps = offsets_to_normals(x_surf, s.gb, kDefaultDepthTau, &cache);
  size_t np = x_surf.size();
  std::vector<Vec3> grad_n(np, Vec3{0, 0, 0});
  for (size_t pi = 0; pi < np; ++pi) {
    if (!s.gb.mask.bits[pi]) continue;
    grad_n[pi] = 2.0 * (maps.n_surf[pi] - s.target_normals[pi]);
  }
  auto grads = o2n_backward(s.mesh, s.gb, s.offset_field, -1, x_surf, offsets, cache, grad_n);
  prob.analytic_grad = grads.d_offset_field.base;
  return prob;
}

// mesh vertex positions + normals -> o2n loss, with frozen coverage and
// barycentrics: the forward oracle re-interpolates the gbuffer attributes
// from the perturbed vertices exactly as the adjoint assumes
inline FdProblem problem_o2n_vertices(uint64_t seed) {
  O2nScene s = make_o2n_scene(seed);
  size_t nv = s.mesh.vertex_count();

  auto rebuilt_gb = [s, nv](const std::vector<double>& x) {
    GBuffer gb = s.gb;
    for (size_t pi = 0; pi < gb.barycentric.size(); ++pi) {
      if (!gb.mask.bits[pi]) continue;
      const auto& f = s.mesh.face_indices[gb.triangle_id[pi]];
      const Vec3& b = gb.barycentric[pi];
      Vec3 pos{0, 0, 0}, nrm{0, 0, 0};
      for (int k = 0; k < 3; ++k) {
        size_t base = static_cast<size_t>(f[k]) * 3;
        pos += b[k] * Vec3{x[base], x[base + 1], x[base + 2]};
        size_t nbase = nv * 3 + base;
        nrm += b[k] * Vec3{x[nbase], x[nbase + 1], x[nbase + 2]};
      }
      gb.position[pi] = pos;
      gb.normal[pi] = normalize(nrm);
    }
    return gb;
  };

  FdProblem prob;
  prob.step = 1e-5;
  prob.x0.resize(nv * 6);
  for (size_t v = 0; v < nv; ++v)
    for (int c = 0; c < 3; ++c) {
      prob.x0[v * 3 + c] = s.mesh.vertex_positions[v][c];
      prob.x0[nv * 3 + v * 3 + c] = s.mesh.vertex_normals[v][c];
    }
  prob.forward = [s, rebuilt_gb](const std::vector<double>& x) {
    GBuffer gb = rebuilt_gb(x);
    auto x_surf = surface_points(gb, s.offset_field, -1);
    auto maps = offsets_to_normals(x_surf, gb);
    double sum = 0;
    for (size_t pi = 0; pi < x_surf.size(); ++pi) {
      if (!gb.mask.bits[pi]) continue;
      sum += length_squared(maps.n_surf[pi] - s.target_normals[pi]);
    }
    return sum;
  };

  std::vector<double> offsets;
  auto x_surf = surface_points(s.gb, s.offset_field, -1, &offsets);
  O2nCache cache;
  auto maps = offsets_to_normals(x_surf, s.gb, kDefaultDepthTau, &cache);
  std::vector<Vec3> grad_n(x_surf.size(), Vec3{0, 0, 0});
  for (size_t pi = 0; pi < x_surf.size(); ++pi) {
    if (!s.gb.mask.bits[pi]) continue;
    grad_n[pi] = 2.0 * (maps.n_surf[pi] - s.target_normals[pi]);
  }
  auto grads = o2n_backward(s.mesh, s.gb, s.offset_field, -1, x_surf, offsets, cache, grad_n);
  prob.analytic_grad.resize(prob.x0.size());
  for (size_t v = 0; v < nv; ++v)
    for (int c = 0; c < 3; ++c) {
      prob.analytic_grad[v * 3 + c] = grads.d_vertex_positions[v][c];
      prob.analytic_grad[nv * 3 + v * 3 + c] = grads.d_vertex_normals[v][c];
    }
  return prob;
}

// frozen-coverage interpolation: vertex positions -> weighted sum of
// interpolated positions and renormalized normals
inline FdProblem problem_raster_attributes(uint64_t seed) {
  std::mt19937_64 rng(seed);
  TriangleMesh mesh = make_grid_patch(3, 3, 2.0);
  std::uniform_real_distribution<double> d(-0.05, 0.05);
  for (auto& p : mesh.vertex_positions) p += Vec3{d(rng), d(rng), d(rng)};
  update_vertex_normals(mesh);
  Camera cam = patch_camera(24, 2.0);
  GBuffer gb = rasterize(mesh, cam);
  size_t np = static_cast<size_t>(gb.width) * gb.height;

  // forward interpolates with the *frozen* gbuffer coverage/barycentrics
  auto eval = [gb, mesh](const std::vector<double>& x) {
    double sum = 0;
    for (size_t pi = 0; pi < gb.barycentric.size(); ++pi) {
      if (!gb.mask.bits[pi]) continue;
      const auto& f = mesh.face_indices[gb.triangle_id[pi]];
      const Vec3& b = gb.barycentric[pi];
      Vec3 pos{0, 0, 0}, nrm{0, 0, 0};
      for (int k = 0; k < 3; ++k) {
        size_t base = static_cast<size_t>(f[k]) * 3;
        pos += b[k] * Vec3{x[base], x[base + 1], x[base + 2]};
        size_t nbase = mesh.vertex_count() * 3 + base;
        nrm += b[k] * Vec3{x[nbase], x[nbase + 1], x[nbase + 2]};
      }
      Vec3 un = normalize(nrm);
      for (int c = 0; c < 3; ++c)
        sum += pixel_weight(pi, c) * pos[c] + pixel_weight(pi, c + 3) * un[c];
    }
    return sum;
  };

  FdProblem prob;
  prob.step = 1e-5;
  prob.x0.resize(mesh.vertex_count() * 6);
  for (size_t v = 0; v < mesh.vertex_count(); ++v)
    for (int c = 0; c < 3; ++c) {
      prob.x0[v * 3 + c] = mesh.vertex_positions[v][c];
      prob.x0[mesh.vertex_count() * 3 + v * 3 + c] = mesh.vertex_normals[v][c];
    }
  prob.forward = eval;

  std::vector<Vec3> gp(np), gn(np);
  for (size_t pi = 0; pi < np; ++pi) {
    gp[pi] = {pixel_weight(pi, 0), pixel_weight(pi, 1), pixel_weight(pi, 2)};
    gn[pi] = {pixel_weight(pi, 3), pixel_weight(pi, 4), pixel_weight(pi, 5)};
  }
  auto rg = rasterize_backward(mesh, gb, gp, gn);
  prob.analytic_grad.resize(prob.x0.size());
  for (size_t v = 0; v < mesh.vertex_count(); ++v)
    for (int c = 0; c < 3; ++c) {
      prob.analytic_grad[v * 3 + c] = rg.d_vertex_positions[v][c];
      prob.analytic_grad[mesh.vertex_count() * 3 + v * 3 + c] = rg.d_vertex_normals[v][c];
    }
  return prob;
}

// (albedo rgb, roughness, normal xyz) -> weighted sum of BRDF channels
inline FdProblem problem_brdf(uint64_t seed, BrdfMode mode) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Vec3 n = normalize(Vec3{0.2 * (d(rng) - 0.5), 0.2 * (d(rng) - 0.5), 1.0});
  Vec3 wi = normalize(Vec3{0.5 * (d(rng) - 0.5), 0.5 * (d(rng) - 0.5), 1.0});
  Vec3 wo = normalize(Vec3{0.5 * (d(rng) - 0.5), 0.5 * (d(rng) - 0.5), 1.0});
  MaterialSample mat{{0.2 + 0.6 * d(rng), 0.2 + 0.6 * d(rng), 0.2 + 0.6 * d(rng)},
                    0.15 + 0.7 * d(rng)};
  FdProblem prob;
  prob.x0 = {mat.albedo.x, mat.albedo.y, mat.albedo.z, mat.roughness, n.x, n.y, n.z};
  prob.forward = [=](const std::vector<double>& x) {
    MaterialSample m{{x[0], x[1], x[2]}, x[3]};
    Vec3 nn{x[4], x[5], x[6]};
    auto e = brdf_eval(m, nn, wi, wo, mode);
    return pixel_weight(0, 0) * e.value.x + pixel_weight(0, 1) * e.value.y +
           pixel_weight(0, 2) * e.value.z;
  };
  auto e = brdf_eval(mat, n, wi, wo, mode);
  double gw[3] = {pixel_weight(0, 0), pixel_weight(0, 1), pixel_weight(0, 2)};
  double gsum = gw[0] + gw[1] + gw[2];
  prob.analytic_grad = {gw[0] * e.d_albedo, gw[1] * e.d_albedo, gw[2] * e.d_albedo,
                        gsum * e.d_roughness,
                        gsum * e.d_normal.x, gsum * e.d_normal.y, gsum * e.d_normal.z};
  return prob;
}

struct RenderScene {
  TriangleMesh mesh;
  Camera camera;
  GBuffer gb;
  std::vector<Vec3> x_surf, n_surf;
  Image albedo, roughness;
  LightProbeSphere probes;
  VisibilityBuffer vis;
  BrdfMode mode;

  RenderInputs inputs() const {
    RenderInputs in;
    in.gbuffer = &gb;
    in.x_surf = &x_surf;
    in.n_surf = &n_surf;
    in.albedo = &albedo;
    in.roughness = &roughness;
    in.probes = &probes;
    in.vis = &vis;
    in.camera_position = camera.position();
    in.mode = mode;
    return in;
  }
};

inline RenderScene make_render_scene(uint64_t seed, BrdfMode mode, int res = 8) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  RenderScene s;
  s.mode = mode;
  s.mesh = make_grid_patch(2, 2, 2.0);
  s.camera = patch_camera(res, 2.0);
  s.gb = rasterize(s.mesh, s.camera);
  size_t np = static_cast<size_t>(res) * res;
  s.x_surf.resize(np);
  s.n_surf.resize(np);
  for (size_t pi = 0; pi < np; ++pi) {
    s.x_surf[pi] = s.gb.position[pi];
    s.n_surf[pi] = normalize(Vec3{0.3 * (d(rng) - 0.5), 0.3 * (d(rng) - 0.5), 1.0});
  }
  s.albedo = Image(res, res, 3);
  s.roughness = Image(res, res, 1);
  for (auto& v : s.albedo.data) v = 0.2 + 0.6 * d(rng);
  for (auto& v : s.roughness.data) v = 0.2 + 0.6 * d(rng);
  s.probes = probe_sphere(4, 8);
  for (auto& L : s.probes.radiance) L = {0.2 + d(rng), 0.2 + d(rng), 0.2 + d(rng)};
  s.vis = VisibilityBuffer(res, res, s.probes.count());
  for (auto& b : s.vis.bits) b = 1;
  return s;
}

enum class RenderParam { kAlbedo, kRoughness, kProbes, kNormals };

inline FdProblem problem_render(uint64_t seed, BrdfMode mode, RenderParam which) {
  RenderScene s = make_render_scene(seed, mode);
  size_t np = static_cast<size_t>(s.gb.width) * s.gb.height;

  auto loss_of = [np](const Image& img) {
    double sum = 0;
    for (size_t pi = 0; pi < np; ++pi)
      for (int c = 0; c < 3; ++c) sum += pixel_weight(pi, c) * img.data[pi * 3 + c];
    return sum;
  };

  FdProblem prob;
  // the rendered image is exactly linear in probe radiance, so a large step
  // is truncation-free and lifts the tiny solid-angle-weighted gradients
  // clear of summation roundoff
  if (which == RenderParam::kProbes) prob.step = 1e-3;
  prob.forward = [s, which, loss_of](const std::vector<double>& x) mutable {
    switch (which) {
      case RenderParam::kAlbedo: s.albedo.data = x; break;
      case RenderParam::kRoughness: s.roughness.data = x; break;
      case RenderParam::kProbes:
        for (size_t p = 0; p < s.probes.radiance.size(); ++p)
          s.probes.radiance[p] = {x[p * 3], x[p * 3 + 1], x[p * 3 + 2]};
        break;
      case RenderParam::kNormals:
        for (size_t pi = 0; pi < s.n_surf.size(); ++pi)
          s.n_surf[pi] = {x[pi * 3], x[pi * 3 + 1], x[pi * 3 + 2]};
        break;
    }
    return loss_of(render_pbr(s.inputs()));
  };

  Image grad_img(s.gb.width, s.gb.height, 3);
  for (size_t pi = 0; pi < np; ++pi)
    for (int c = 0; c < 3; ++c) grad_img.data[pi * 3 + c] = pixel_weight(pi, c);
  auto grads = render_pbr_backward(s.inputs(), grad_img);

  switch (which) {
    case RenderParam::kAlbedo:
      prob.x0 = s.albedo.data;
      prob.analytic_grad = grads.d_albedo.data;
      break;
    case RenderParam::kRoughness:
      prob.x0 = s.roughness.data;
      prob.analytic_grad = grads.d_roughness.data;
      break;
    case RenderParam::kProbes:
      for (const auto& L : s.probes.radiance) {
        prob.x0.insert(prob.x0.end(), {L.x, L.y, L.z});
      }
      for (const auto& g : grads.d_probes) {
        prob.analytic_grad.insert(prob.analytic_grad.end(), {g.x, g.y, g.z});
      }
      break;
    case RenderParam::kNormals:
      for (const auto& n : s.n_surf) prob.x0.insert(prob.x0.end(), {n.x, n.y, n.z});
      for (const auto& g : grads.d_n_surf)
        prob.analytic_grad.insert(prob.analytic_grad.end(), {g.x, g.y, g.z});
      break;
  }
  return prob;
}

inline FdProblem problem_image_loss(uint64_t seed, bool ssim) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.1, 0.9);
  int res = ssim ? 32 : 8;
  Image pred(res, res, 3), target(res, res, 3);
  for (auto& v : pred.data) v = d(rng);
  for (auto& v : target.data) v = d(rng);
  Mask mask(res, res, true);
  FdProblem prob;
  prob.x0 = pred.data;
  prob.forward = [pred, target, mask, ssim](const std::vector<double>& x) mutable {
    pred.data = x;
    return ssim ? loss_ssim(pred, target, mask).value : loss_mse(pred, target, mask).value;
  };
  auto r = ssim ? loss_ssim(pred, target, mask) : loss_mse(pred, target, mask);
  prob.analytic_grad = r.grad_pred.data;
  // per-coordinate gradients are ~1/(windows*channels); a larger step keeps
  // the central difference above roundoff. MSE is quadratic, so the central
  // difference is exact at any step and the large one only reduces roundoff.
  prob.step = ssim ? 1e-4 : 1e-3;
  return prob;
}

inline FdProblem problem_mesh_regularizers(uint64_t seed) {
  std::mt19937_64 rng(seed);
  TriangleMesh mesh = make_grid_patch(4, 4, 1.0);  // 25 vertices
  std::uniform_real_distribution<double> d(-0.08, 0.08);
  for (auto& p : mesh.vertex_positions) p += Vec3{d(rng), d(rng), d(rng)};
  double edge_target = 0.2;
  FdProblem prob;
  for (const auto& p : mesh.vertex_positions) prob.x0.insert(prob.x0.end(), {p.x, p.y, p.z});
  prob.forward = [mesh, edge_target](const std::vector<double>& x) mutable {
    for (size_t v = 0; v < mesh.vertex_count(); ++v)
      mesh.vertex_positions[v] = {x[v * 3], x[v * 3 + 1], x[v * 3 + 2]};
    auto r = mesh_regularizers(mesh, edge_target);
    return r.edge_loss + r.normal_consistency_loss + r.laplacian_loss;
  };
  auto r = mesh_regularizers(mesh, edge_target);
  for (size_t v = 0; v < mesh.vertex_count(); ++v) {
    Vec3 g = r.grad_edge[v] + r.grad_normal[v] + r.grad_laplacian[v];
    prob.analytic_grad.insert(prob.analytic_grad.end(), {g.x, g.y, g.z});
  }
  return prob;
}

}  // namespace gradcheck_detail

struct GradcheckOp {
  std::function<FdProblem(uint64_t)> build;
  double tolerance;
};

inline const std::map<std::string, GradcheckOp>& gradcheck_registry() {
  using namespace gradcheck_detail;
  static const std::map<std::string, GradcheckOp> registry = {
      {"field_query", {[](uint64_t s) { return problem_field_query(s); }, 1e-6}},
      {"o2n_chain", {[](uint64_t s) { return problem_o2n_field(s); }, 1e-4}},
      {"o2n_vertices", {[](uint64_t s) { return problem_o2n_vertices(s); }, 1e-4}},
      {"raster_attributes", {[](uint64_t s) { return problem_raster_attributes(s); }, 1e-4}},
      {"brdf_literal", {[](uint64_t s) { return problem_brdf(s, BrdfMode::kLiteral); }, 1e-4}},
      {"brdf_microfacet",
       {[](uint64_t s) { return problem_brdf(s, BrdfMode::kMicrofacet); }, 1e-4}},
      {"render_albedo_literal",
       {[](uint64_t s) { return problem_render(s, BrdfMode::kLiteral, RenderParam::kAlbedo); },
        1e-4}},
      {"render_albedo_microfacet",
       {[](uint64_t s) { return problem_render(s, BrdfMode::kMicrofacet, RenderParam::kAlbedo); },
        1e-4}},
      {"render_roughness_microfacet",
       {[](uint64_t s) {
          return problem_render(s, BrdfMode::kMicrofacet, RenderParam::kRoughness);
        },
        1e-4}},
      {"render_probes_literal",
       {[](uint64_t s) { return problem_render(s, BrdfMode::kLiteral, RenderParam::kProbes); },
        1e-4}},
      {"render_probes_microfacet",
       {[](uint64_t s) { return problem_render(s, BrdfMode::kMicrofacet, RenderParam::kProbes); },
        1e-4}},
      {"render_normals_literal",
       {[](uint64_t s) { return problem_render(s, BrdfMode::kLiteral, RenderParam::kNormals); },
        1e-4}},
      {"render_normals_microfacet",
       {[](uint64_t s) { return problem_render(s, BrdfMode::kMicrofacet, RenderParam::kNormals); },
        1e-4}},
      {"mse", {[](uint64_t s) { return problem_image_loss(s, false); }, 1e-6}},
      {"ssim", {[](uint64_t s) { return problem_image_loss(s, true); }, 1e-4}},
      {"mesh_regularizers", {[](uint64_t s) { return problem_mesh_regularizers(s); }, 1e-4}},
  };
  return registry;
}

inline GradcheckReport gradcheck(const std::string& op_name, uint64_t seed, double tolerance = -1) {
  const auto& registry = gradcheck_registry();
  auto it = registry.find(op_name);
  if (it == registry.end()) throw ArgumentError("gradcheck: unknown op " + op_name);
  double tol = tolerance > 0 ? tolerance : it->second.tolerance;
  return run_fd_check(it->second.build(seed), tol);
}

}  // namespace dis

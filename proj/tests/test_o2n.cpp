#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "dis/gradcheck.hpp"
#include "dis/o2n.hpp"
#include "dis/shapes.hpp"

using namespace dis;

namespace {

// Synthetic fully-masked gbuffer whose surface is the height field z=f(u,v),
// sampled on an n x n pixel grid with spacing h (world y runs opposite image
// y, matching the rasterizer's convention).
GBuffer height_field_gbuffer(int n, double h, const std::function<double(double, double)>& f) {
  GBuffer gb(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      size_t pi = gb.index(i, j);
      double u = i * h, v = -j * h;
      gb.mask.bits[pi] = 1;
      gb.triangle_id[pi] = 0;
      gb.position[pi] = {u, v, f(u, v)};
      gb.normal[pi] = {0, 0, 1};
      gb.depth[pi] = 1.0;  // constant: no discontinuity skips
      gb.uv[pi] = {u, -v};
    }
  return gb;
}

double angle_deg(const Vec3& a, const Vec3& b) {
  return std::acos(clamp(dot(normalize(a), normalize(b)), -1.0, 1.0)) * 180.0 / kPi;
}

}  // namespace

TEST_CASE("flat plane converts to the exact plane normal") {
  GBuffer gb = height_field_gbuffer(16, 0.1, [](double, double) { return 0.3; });
  SurfaceMaps maps = offsets_to_normals(gb.position, gb);
  for (size_t pi = 0; pi < maps.n_surf.size(); ++pi) {
    CHECK(length(maps.n_surf[pi] - Vec3{0, 0, 1}) < 1e-12);
  }
}

TEST_CASE("linear ramp z = a*x converts exactly to (-a,0,1)/sqrt(1+a^2)") {
  double a = 0.7;
  GBuffer gb = height_field_gbuffer(16, 0.05, [&](double u, double) { return a * u; });
  O2nCache cache;
  SurfaceMaps maps = offsets_to_normals(gb.position, gb, kDefaultDepthTau, &cache);
  Vec3 expected = normalize(Vec3{-a, 0, 1});
  for (size_t pi = 0; pi < maps.n_surf.size(); ++pi) {
    if (cache.fallback[pi]) continue;  // corners use the base normal
    CHECK(length(maps.n_surf[pi] - expected) < 1e-6);
  }
}

TEST_CASE("sinusoidal height field: <=2 deg mean, <=5 deg max away from the boundary") {
  int n = 128;
  double h = 1.0 / n, amp = 0.05, k = 2 * kPi;
  auto f = [&](double u, double v) { return amp * std::sin(k * u) * std::sin(k * v); };
  GBuffer gb = height_field_gbuffer(n, h, f);
  SurfaceMaps maps = offsets_to_normals(gb.position, gb);
  double sum = 0, worst = 0;
  int count = 0;
  for (int j = 2; j < n - 2; ++j)
    for (int i = 2; i < n - 2; ++i) {
      double u = i * h, v = -j * h;
      Vec3 analytic = normalize(Vec3{-amp * k * std::cos(k * u) * std::sin(k * v),
                                     -amp * k * std::sin(k * u) * std::cos(k * v), 1});
      double err = angle_deg(maps.n_surf[gb.index(i, j)], analytic);
      sum += err;
      worst = std::max(worst, err);
      ++count;
    }
  INFO("mean=" << sum / count << " max=" << worst);
  CHECK(sum / count <= 2.0);
  CHECK(worst <= 5.0);
}

TEST_CASE("surface_points with a zero offset field is the identity on positions") {
  TriangleMesh sphere = make_icosphere(2);
  Camera cam = Camera::look_at({0, 0, 3}, {0, 0, 0}, {0, 1, 0}, 45, 48, 48);
  GBuffer gb = rasterize(sphere, cam);
  UVField zero = field_init(8, 8, 1, {0.0});
  std::vector<double> cached;
  std::vector<Vec3> x_surf = surface_points(gb, zero, -1, &cached);
  for (size_t pi = 0; pi < x_surf.size(); ++pi) {
    if (!gb.mask.bits[pi]) continue;
    CHECK(length(x_surf[pi] - gb.position[pi]) == 0.0);
    CHECK(cached[pi] == 0.0);
  }
}

TEST_CASE("constant offset pushes points along the base normal") {
  TriangleMesh sphere = make_icosphere(2);
  Camera cam = Camera::look_at({0, 0, 3}, {0, 0, 0}, {0, 1, 0}, 45, 32, 32);
  GBuffer gb = rasterize(sphere, cam);
  UVField field = field_init(4, 4, 1, {0.02});
  std::vector<Vec3> x_surf = surface_points(gb, field, -1);
  for (size_t pi = 0; pi < x_surf.size(); ++pi) {
    if (!gb.mask.bits[pi]) continue;
    CHECK(length(x_surf[pi] - (gb.position[pi] + 0.02 * gb.normal[pi])) < 1e-15);
  }
}

TEST_CASE("conversion is covariant under rotation and invariant under uniform scale") {
  int n = 24;
  auto f = [](double u, double v) { return 0.1 * std::sin(9 * u) * std::cos(7 * v); };
  GBuffer gb = height_field_gbuffer(n, 0.04, f);
  SurfaceMaps base = offsets_to_normals(gb.position, gb);

  Mat3 rot = Mat3::rotation_axis_angle(normalize(Vec3{1, 2, 0.5}), 0.8);
  GBuffer gbr = gb;
  GBuffer gbs = gb;
  for (size_t pi = 0; pi < gb.position.size(); ++pi) {
    gbr.position[pi] = rot * gb.position[pi];
    gbs.position[pi] = 3.5 * gb.position[pi];
  }
  SurfaceMaps rotated = offsets_to_normals(gbr.position, gbr);
  SurfaceMaps scaled = offsets_to_normals(gbs.position, gbs);
  for (size_t pi = 0; pi < base.n_surf.size(); ++pi) {
    if (!base.validity.bits[pi]) continue;
    CHECK(length(rotated.n_surf[pi] - rot * base.n_surf[pi]) < 1e-9);
    CHECK(length(scaled.n_surf[pi] - base.n_surf[pi]) < 1e-9);
  }
}

TEST_CASE("validity: interior pixels valid, edges partial, corners fall back") {
  GBuffer gb = height_field_gbuffer(8, 0.1, [](double, double) { return 0.0; });
  O2nCache cache;
  SurfaceMaps maps = offsets_to_normals(gb.position, gb, kDefaultDepthTau, &cache);
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 8; ++i) {
      size_t pi = gb.index(i, j);
      bool interior = i > 0 && i < 7 && j > 0 && j < 7;
      CHECK(static_cast<bool>(maps.validity.bits[pi]) == interior);
    }
  // corners: only one surviving cross term -> base-normal fallback
  CHECK(cache.fallback[gb.index(0, 0)] == 1);
  CHECK(length(maps.n_surf[gb.index(0, 0)] - gb.normal[gb.index(0, 0)]) == 0.0);
  // edge (non-corner): two surviving terms, converted but not valid
  CHECK(cache.fallback[gb.index(3, 0)] == 0);
}

TEST_CASE("depth discontinuity suppresses terms across the jump") {
  // two flat panels at depths 1 and 2, split at i=8; same world height so the
  // stencil would mix them without the depth guard
  int n = 16;
  GBuffer gb = height_field_gbuffer(n, 0.1, [](double, double) { return 0.0; });
  for (int j = 0; j < n; ++j)
    for (int i = 8; i < n; ++i) {
      size_t pi = gb.index(i, j);
      gb.depth[pi] = 2.0;
      gb.position[pi].z = 5.0;  // wildly different surface
    }
  SurfaceMaps maps = offsets_to_normals(gb.position, gb);
  // pixels adjacent to the jump on the near side still see a flat plane
  for (int j = 1; j < n - 1; ++j) {
    size_t pi = gb.index(7, j);
    CHECK(length(maps.n_surf[pi] - Vec3{0, 0, 1}) < 1e-9);
    CHECK(!maps.validity.bits[pi]);  // a term was suppressed
  }
}

TEST_CASE("backward validates inputs") {
  GBuffer gb = height_field_gbuffer(8, 0.1, [](double, double) { return 0.0; });
  TriangleMesh mesh = make_plane_grid(2, 2, 1, 1);
  UVField field = field_init(4, 4, 1, {0.0});
  std::vector<double> cached(64, 0.0);
  std::vector<Vec3> grad(64, Vec3{0, 0, 0});
  O2nCache stale;  // never filled by a forward pass
  CHECK_THROWS_AS(
      o2n_backward(mesh, gb, field, -1, gb.position, cached, stale, grad), StateError);
  O2nCache cache;
  offsets_to_normals(gb.position, gb, kDefaultDepthTau, &cache);
  CHECK_THROWS_AS(o2n_backward(mesh, gb, field, -1, gb.position, cached, cache,
                               std::vector<Vec3>(3)),
                  ArgumentError);
}

TEST_CASE("offset-field gradient matches finite differences") {
  auto rep = gradcheck("o2n_chain", 9);
  INFO("max_rel_err=" << rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("vertex-position gradient matches frozen-normal finite differences") {
  auto rep = gradcheck("o2n_vertices", 9);
  INFO("max_rel_err=" << rep.max_rel_err);
  CHECK(rep.pass);
}

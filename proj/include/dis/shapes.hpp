#pragma once

#include <cmath>
#include <map>

#include "dis/mesh.hpp"

namespace dis {

// Icosphere: subdivided icosahedron projected to the unit sphere, with a
// lat-long UV unwrap (not bijective at the seam, adequate for test scenes;
// synthetic recipes use the grid/sphere shapes below when they need clean
// UVs).
inline TriangleMesh make_icosphere(int subdivisions, double radius = 1.0) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                             {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                             {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v = normalize(v);
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      int idx = static_cast<int>(verts.size());
      verts.push_back(normalize((verts[a] + verts[b]) * 0.5));
      midpoint[key] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& f : faces) {
      int a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }
  TriangleMesh mesh;
  mesh.face_indices = std::move(faces);
  for (const auto& v : verts) {
    mesh.vertex_positions.push_back(v * radius);
    double u = 0.5 + std::atan2(v.z, v.x) / (2 * kPi);
    double w = std::acos(clamp(v.y, -1.0, 1.0)) / kPi;
    mesh.vertex_uvs.push_back({u, w});
  }
  update_vertex_normals(mesh);
  return mesh;
}

// Regular grid patch in the z=0 plane, CCW toward +z, bijective UVs.
inline TriangleMesh make_plane_grid(int nx, int ny, double size_x, double size_y) {
  TriangleMesh mesh;
  for (int y = 0; y <= ny; ++y)
    for (int x = 0; x <= nx; ++x) {
      double u = static_cast<double>(x) / nx, v = static_cast<double>(y) / ny;
      mesh.vertex_positions.push_back({(u - 0.5) * size_x, (v - 0.5) * size_y, 0.0});
      mesh.vertex_uvs.push_back({u, v});
    }
  auto vid = [&](int x, int y) { return y * (nx + 1) + x; };
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      mesh.face_indices.push_back({vid(x, y), vid(x + 1, y), vid(x + 1, y + 1)});
      mesh.face_indices.push_back({vid(x, y), vid(x + 1, y + 1), vid(x, y + 1)});
    }
  update_vertex_normals(mesh);
  return mesh;
}

// Axis-aligned box as 12 triangles; UVs are a per-face atlas packed into a
// 4x3 grid of tiles (bijective).
inline TriangleMesh make_box(const Vec3& center, const Vec3& half_extent) {
  TriangleMesh mesh;
  // 6 faces x 4 corners, duplicated vertices so normals stay per-face sharp
  struct Face {
    Vec3 normal, u_axis, v_axis;
  };
  const Face faces[6] = {
      {{1, 0, 0}, {0, 0, -1}, {0, 1, 0}},  {{-1, 0, 0}, {0, 0, 1}, {0, 1, 0}},
      {{0, 1, 0}, {1, 0, 0}, {0, 0, -1}},  {{0, -1, 0}, {1, 0, 0}, {0, 0, 1}},
      {{0, 0, 1}, {1, 0, 0}, {0, 1, 0}},   {{0, 0, -1}, {-1, 0, 0}, {0, 1, 0}}};
  for (int f = 0; f < 6; ++f) {
    const Face& face = faces[f];
    int base = static_cast<int>(mesh.vertex_positions.size());
    double tile_u = (f % 4) * 0.25, tile_v = (f / 4) * (1.0 / 3.0);
    for (int corner = 0; corner < 4; ++corner) {
      double su = corner % 2 ? 1.0 : -1.0;
      double sv = corner / 2 ? 1.0 : -1.0;
      Vec3 corner_dir = face.normal + su * face.u_axis + sv * face.v_axis;
      mesh.vertex_positions.push_back(center + corner_dir * half_extent);
      mesh.vertex_uvs.push_back({tile_u + (su * 0.5 + 0.5) * 0.23 + 0.01,
                                 tile_v + (sv * 0.5 + 0.5) * 0.31 + 0.01});
    }
    // wind so the face normal points outward
    mesh.face_indices.push_back({base, base + 1, base + 3});
    mesh.face_indices.push_back({base, base + 3, base + 2});
  }
  update_vertex_normals(mesh);
  // fix winding: flip faces whose normal points inward
  for (auto& fi : mesh.face_indices) {
    Vec3 a = mesh.vertex_positions[fi[0]], b = mesh.vertex_positions[fi[1]],
         c = mesh.vertex_positions[fi[2]];
    Vec3 n = cross(b - a, c - a);
    Vec3 outward = (a + b + c) / 3.0 - center;
    if (dot(n, outward) < 0) std::swap(fi[1], fi[2]);
  }
  update_vertex_normals(mesh);
  return mesh;
}

inline TriangleMesh make_unit_cube() { return make_box({0, 0, 0}, {0.5, 0.5, 0.5}); }

}  // namespace dis

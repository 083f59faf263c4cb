#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dis/vec.hpp"

namespace dis {

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Indexed triangle mesh with per-vertex UVs, derived normals and optional
// linear-blend-skinning weights (rows over `bone_count` bones, summing to 1).
struct TriangleMesh {
  std::vector<Vec3> vertex_positions;
  std::vector<Vec2> vertex_uvs;
  std::vector<Vec3> vertex_normals;
  std::vector<std::array<int, 3>> face_indices;
  std::vector<std::vector<double>> skinning_weights;  // per vertex, size bone_count
  int bone_count = 0;

  size_t vertex_count() const { return vertex_positions.size(); }
  size_t face_count() const { return face_indices.size(); }

  void validate() const {
    int n = static_cast<int>(vertex_positions.size());
    for (const auto& f : face_indices) {
      for (int i : f)
        if (i < 0 || i >= n) throw ArgumentError("mesh: face index out of range");
      if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
        throw ArgumentError("mesh: degenerate face (repeated vertex index)");
    }
    if (!skinning_weights.empty()) {
      if (skinning_weights.size() != vertex_positions.size())
        throw ArgumentError("mesh: skinning weight row count != vertex count");
      for (const auto& row : skinning_weights) {
        if (static_cast<int>(row.size()) != bone_count)
          throw ArgumentError("mesh: skinning weight row size != bone_count");
        double s = 0;
        for (double w : row) {
          if (w < -1e-9) throw ArgumentError("mesh: negative skinning weight");
          s += w;
        }
        if (std::abs(s - 1.0) > 1e-6) throw ArgumentError("mesh: skinning weights do not sum to 1");
      }
    }
  }

  void bounding_box(Vec3& lo, Vec3& hi) const {
    lo = Vec3(std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
              std::numeric_limits<double>::max());
    hi = -1.0 * lo;
    for (const auto& p : vertex_positions) {
      lo = min(lo, p);
      hi = max(hi, p);
    }
  }

  double bbox_diagonal() const {
    if (vertex_positions.empty()) return 0;
    Vec3 lo, hi;
    bounding_box(lo, hi);
    return length(hi - lo);
  }
};

// Per-frame rigid bone transforms.
struct Pose {
  std::vector<RigidTransform> bone_transforms;
  int frame_index = 0;

  void validate() const {
    for (const auto& t : bone_transforms) {
      if (t.rotation.orthonormality_error() > 1e-6 || t.rotation.determinant() < 0)
        throw ArgumentError("pose: rotation not orthonormal with det +1");
    }
  }
};

// One scalar displacement per vertex, applied along the vertex normal.
struct VertexOffsets {
  std::vector<double> values;
};

// Area-weighted vertex normals; zero-area stars fall back to +Z.
inline std::vector<Vec3> compute_vertex_normals(const TriangleMesh& mesh) {
  std::vector<Vec3> normals(mesh.vertex_count(), Vec3{0, 0, 0});
  for (const auto& f : mesh.face_indices) {
    const Vec3& a = mesh.vertex_positions[f[0]];
    const Vec3& b = mesh.vertex_positions[f[1]];
    const Vec3& c = mesh.vertex_positions[f[2]];
    Vec3 fn = cross(b - a, c - a);  // length = 2*area, so this is area weighting
    normals[f[0]] += fn;
    normals[f[1]] += fn;
    normals[f[2]] += fn;
  }
  for (auto& n : normals) {
    double l = length(n);
    n = l > 1e-14 ? n / l : Vec3{0, 0, 1};
  }
  return normals;
}

inline void update_vertex_normals(TriangleMesh& mesh) {
  mesh.vertex_normals = compute_vertex_normals(mesh);
}

// x̂_v = x_v + n_v * l_v. Topology and UVs unchanged, normals recomputed.
inline TriangleMesh apply_vertex_offsets(const TriangleMesh& mesh, const VertexOffsets& offsets) {
  if (offsets.values.size() != mesh.vertex_count())
    throw ArgumentError("apply_vertex_offsets: offset count != vertex count");
  if (mesh.vertex_normals.size() != mesh.vertex_count())
    throw ArgumentError("apply_vertex_offsets: vertex normals not computed");
  TriangleMesh out = mesh;
  for (size_t v = 0; v < mesh.vertex_count(); ++v)
    out.vertex_positions[v] = mesh.vertex_positions[v] + mesh.vertex_normals[v] * offsets.values[v];
  update_vertex_normals(out);
  return out;
}

// Linear blend skinning: x_posed = sum_j w_j (R_j x + t_j). J=0 is identity.
inline TriangleMesh pose_mesh(const TriangleMesh& mesh, const Pose& pose) {
  int joints = static_cast<int>(pose.bone_transforms.size());
  if (joints == 0) return mesh;
  if (mesh.skinning_weights.empty())
    throw ArgumentError("pose_mesh: mesh has no skinning weights but pose has bones");
  if (mesh.bone_count != joints) throw ArgumentError("pose_mesh: bone count mismatch");
  TriangleMesh out = mesh;
  bool identity = true;
  for (const auto& t : pose.bone_transforms) {
    if (t.rotation.m != Mat3::identity().m || !(t.translation == Vec3{0, 0, 0})) identity = false;
  }
  if (identity) return mesh;  // bitwise no-op contract
  for (size_t v = 0; v < mesh.vertex_count(); ++v) {
    Vec3 p{0, 0, 0}, n{0, 0, 0};
    for (int j = 0; j < joints; ++j) {
      double w = mesh.skinning_weights[v][j];
      if (w == 0) continue;
      p += w * pose.bone_transforms[j].apply(mesh.vertex_positions[v]);
      n += w * pose.bone_transforms[j].apply_vector(mesh.vertex_normals.empty()
                                                       ? Vec3{0, 0, 1}
                                                       : mesh.vertex_normals[v]);
    }
    out.vertex_positions[v] = p;
    if (!mesh.vertex_normals.empty()) out.vertex_normals[v] = normalize(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mesh regularizers with adjoints w.r.t. vertex positions.
// ---------------------------------------------------------------------------

struct MeshRegularizerResult {
  double edge_loss = 0;
  double normal_consistency_loss = 0;
  double laplacian_loss = 0;
  // d(loss)/d(vertex) for each term separately; caller combines with weights.
  std::vector<Vec3> grad_edge;
  std::vector<Vec3> grad_normal;
  std::vector<Vec3> grad_laplacian;
};

namespace detail {

struct EdgeKey {
  int a, b;
  bool operator<(const EdgeKey& o) const { return a != o.a ? a < o.a : b < o.b; }
};

inline EdgeKey make_edge(int u, int v) { return u < v ? EdgeKey{u, v} : EdgeKey{v, u}; }

}  // namespace detail

inline MeshRegularizerResult mesh_regularizers(const TriangleMesh& mesh, double edge_target) {
  MeshRegularizerResult r;
  size_t nv = mesh.vertex_count();
  r.grad_edge.assign(nv, Vec3{0, 0, 0});
  r.grad_normal.assign(nv, Vec3{0, 0, 0});
  r.grad_laplacian.assign(nv, Vec3{0, 0, 0});

  // unique edges + the (up to 2) faces sharing each
  std::map<detail::EdgeKey, std::vector<int>> edge_faces;
  for (size_t fi = 0; fi < mesh.face_count(); ++fi) {
    const auto& f = mesh.face_indices[fi];
    for (int k = 0; k < 3; ++k)
      edge_faces[detail::make_edge(f[k], f[(k + 1) % 3])].push_back(static_cast<int>(fi));
  }

  // edge length loss
  if (!edge_faces.empty()) {
    double inv_e = 1.0 / static_cast<double>(edge_faces.size());
    for (const auto& [e, faces] : edge_faces) {
      Vec3 d = mesh.vertex_positions[e.b] - mesh.vertex_positions[e.a];
      double len = length(d);
      double diff = len - edge_target;
      r.edge_loss += diff * diff * inv_e;
      if (len > 1e-14) {
        Vec3 g = (2.0 * diff * inv_e / len) * d;
        r.grad_edge[e.b] += g;
        r.grad_edge[e.a] -= g;
      }
    }
  }

  // dihedral normal consistency over interior edges
  auto face_normal_raw = [&](int fi) {
    const auto& f = mesh.face_indices[fi];
    return cross(mesh.vertex_positions[f[1]] - mesh.vertex_positions[f[0]],
                 mesh.vertex_positions[f[2]] - mesh.vertex_positions[f[0]]);
  };
  std::vector<const detail::EdgeKey*> interior;
  std::vector<std::pair<int, int>> interior_faces;
  for (const auto& [e, faces] : edge_faces)
    if (faces.size() == 2) interior_faces.push_back({faces[0], faces[1]});
  if (!interior_faces.empty()) {
    double inv_i = 1.0 / static_cast<double>(interior_faces.size());
    for (auto [f0, f1] : interior_faces) {
      Vec3 n0 = face_normal_raw(f0), n1 = face_normal_raw(f1);
      double l0 = length(n0), l1 = length(n1);
      if (l0 < 1e-14 || l1 < 1e-14) continue;
      Vec3 u0 = n0 / l0, u1 = n1 / l1;
      double c = dot(u0, u1);
      r.normal_consistency_loss += (1.0 - c) * inv_i;
      // d(1-c)/du0 = -u1 (and symmetric); chain through normalization and cross
      auto scatter = [&](int fi, const Vec3& grad_unit_normal, const Vec3& un, double ln) {
        Vec3 gn = (grad_unit_normal - dot(grad_unit_normal, un) * un) / ln;
        const auto& f = mesh.face_indices[fi];
        Vec3 e1 = mesh.vertex_positions[f[1]] - mesh.vertex_positions[f[0]];
        Vec3 e2 = mesh.vertex_positions[f[2]] - mesh.vertex_positions[f[0]];
        Vec3 ge1 = cross(e2, gn);
        Vec3 ge2 = cross(gn, e1);
        r.grad_normal[f[0]] -= ge1 + ge2;
        r.grad_normal[f[1]] += ge1;
        r.grad_normal[f[2]] += ge2;
      };
      scatter(f0, (-inv_i) * u1, u0, l0);
      scatter(f1, (-inv_i) * u0, u1, l1);
    }
  }

  // uniform Laplacian: delta_v = x_v - mean(neighbors)
  std::vector<std::vector<int>> neighbors(nv);
  for (const auto& [e, faces] : edge_faces) {
    neighbors[e.a].push_back(e.b);
    neighbors[e.b].push_back(e.a);
  }
  if (nv > 0) {
    double inv_v = 1.0 / static_cast<double>(nv);
    std::vector<Vec3> delta(nv, Vec3{0, 0, 0});
    for (size_t v = 0; v < nv; ++v) {
      if (neighbors[v].empty()) continue;
      Vec3 mean{0, 0, 0};
      for (int u : neighbors[v]) mean += mesh.vertex_positions[u];
      mean = mean / static_cast<double>(neighbors[v].size());
      delta[v] = mesh.vertex_positions[v] - mean;
      r.laplacian_loss += length_squared(delta[v]) * inv_v;
    }
    for (size_t v = 0; v < nv; ++v) {
      if (neighbors[v].empty()) continue;
      Vec3 g = (2.0 * inv_v) * delta[v];
      r.grad_laplacian[v] += g;
      double inv_deg = 1.0 / static_cast<double>(neighbors[v].size());
      for (int u : neighbors[v]) r.grad_laplacian[u] -= inv_deg * g;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Chamfer distance and point-to-surface distance.
// ---------------------------------------------------------------------------

// Ericson-style closest point on triangle.
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return a;
  Vec3 bp = p - b;
  double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return b;
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    double v = d1 / (d1 - d3);
    return a + v * ab;
  }
  Vec3 cp = p - c;
  double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return c;
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    double w = d2 / (d2 - d6);
    return a + w * ac;
  }
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return b + w * (c - b);
  }
  double denom = 1.0 / (va + vb + vc);
  double v = vb * denom, w = vc * denom;
  return a + v * ab + w * ac;
}

// Area-uniform surface samples, deterministic per seed.
inline std::vector<Vec3> sample_surface(const TriangleMesh& mesh, int sample_count,
                                        uint64_t seed) {
  if (mesh.face_count() == 0) throw ArgumentError("sample_surface: empty mesh");
  std::vector<double> cum_area(mesh.face_count());
  double total = 0;
  for (size_t f = 0; f < mesh.face_count(); ++f) {
    const auto& t = mesh.face_indices[f];
    total += 0.5 * length(cross(mesh.vertex_positions[t[1]] - mesh.vertex_positions[t[0]],
                                mesh.vertex_positions[t[2]] - mesh.vertex_positions[t[0]]));
    cum_area[f] = total;
  }
  if (total <= 0) throw ArgumentError("sample_surface: zero-area mesh");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> points;
  points.reserve(sample_count);
  for (int i = 0; i < sample_count; ++i) {
    double u = uni(rng) * total;
    size_t f = std::lower_bound(cum_area.begin(), cum_area.end(), u) - cum_area.begin();
    if (f >= mesh.face_count()) f = mesh.face_count() - 1;
    double r1 = std::sqrt(uni(rng)), r2 = uni(rng);
    const auto& t = mesh.face_indices[f];
    Vec3 p = (1 - r1) * mesh.vertex_positions[t[0]] +
             (r1 * (1 - r2)) * mesh.vertex_positions[t[1]] +
             (r1 * r2) * mesh.vertex_positions[t[2]];
    points.push_back(p);
  }
  return points;
}

inline double point_to_mesh_distance(const Vec3& p, const TriangleMesh& mesh) {
  double best = std::numeric_limits<double>::max();
  for (const auto& f : mesh.face_indices) {
    Vec3 q = closest_point_on_triangle(p, mesh.vertex_positions[f[0]], mesh.vertex_positions[f[1]],
                                       mesh.vertex_positions[f[2]]);
    best = std::min(best, length_squared(p - q));
  }
  return std::sqrt(best);
}

struct MeshDistanceResult {
  double chamfer = 0;  // symmetric mean nearest-sample distance
  double p2s = 0;      // mean sample-of-a to surface-of-b distance
};

inline MeshDistanceResult chamfer_and_p2s(const TriangleMesh& mesh_a, const TriangleMesh& mesh_b,
                                          int sample_count, uint64_t seed) {
  if (sample_count < 1) throw ArgumentError("chamfer_and_p2s: sample_count must be >= 1");
  if (mesh_a.face_count() == 0 || mesh_b.face_count() == 0)
    throw ArgumentError("chamfer_and_p2s: empty mesh");
  auto sa = sample_surface(mesh_a, sample_count, seed);
  auto sb = sample_surface(mesh_b, sample_count, seed + 1);
  auto mean_nn = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::max();
      for (const auto& q : to) best = std::min(best, length_squared(p - q));
      sum += std::sqrt(best);
    }
    return sum / static_cast<double>(from.size());
  };
  MeshDistanceResult r;
  r.chamfer = 0.5 * (mean_nn(sa, sb) + mean_nn(sb, sa));
  double sum = 0;
  for (const auto& p : sa) sum += point_to_mesh_distance(p, mesh_b);
  r.p2s = sum / static_cast<double>(sa.size());
  return r;
}

// ---------------------------------------------------------------------------
// OBJ subset I/O: v / vt / vn / f v/vt/vn, triangles only.
// Skinning weights in a sidecar text file, one row of J weights per vertex.
// ---------------------------------------------------------------------------

inline void save_obj(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_obj: cannot open " + path);
  f.precision(12);
  for (const auto& p : mesh.vertex_positions) f << "v " << p.x << " " << p.y << " " << p.z << "\n";
  for (const auto& t : mesh.vertex_uvs) f << "vt " << t.x << " " << t.y << "\n";
  for (const auto& n : mesh.vertex_normals) {
    Vec3 u = normalize(n);
    f << "vn " << u.x << " " << u.y << " " << u.z << "\n";
  }
  for (const auto& face : mesh.face_indices) {
    f << "f";
    for (int i : face) f << " " << (i + 1) << "/" << (i + 1) << "/" << (i + 1);
    f << "\n";
  }
}

inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_obj: cannot open " + path);
  std::vector<Vec3> positions, normals;
  std::vector<Vec2> uvs;
  struct Corner {
    int v, vt, vn;
    bool operator<(const Corner& o) const {
      if (v != o.v) return v < o.v;
      if (vt != o.vt) return vt < o.vt;
      return vn < o.vn;
    }
  };
  std::vector<std::array<Corner, 3>> raw_faces;
  std::vector<int> face_lines;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 p;
      ss >> p.x >> p.y >> p.z;
      positions.push_back(p);
    } else if (tag == "vt") {
      Vec2 t;
      ss >> t.x >> t.y;
      uvs.push_back(t);
    } else if (tag == "vn") {
      Vec3 n;
      ss >> n.x >> n.y >> n.z;
      normals.push_back(n);
    } else if (tag == "f") {
      std::vector<Corner> corners;
      std::string tok;
      while (ss >> tok) {
        Corner c{};
        if (std::sscanf(tok.c_str(), "%d/%d/%d", &c.v, &c.vt, &c.vn) != 3)
          throw std::runtime_error("load_obj: " + path + ": line " + std::to_string(line_no) +
                                   ": face corners must be v/vt/vn");
        c.v -= 1;
        c.vt -= 1;
        c.vn -= 1;
        if (c.v < 0 || c.v >= static_cast<int>(positions.size()) || c.vt < 0 ||
            c.vt >= static_cast<int>(uvs.size()) || c.vn < 0 ||
            c.vn >= static_cast<int>(normals.size()))
          throw std::runtime_error("load_obj: " + path + ": line " + std::to_string(line_no) +
                                   ": face index out of range");
        corners.push_back(c);
      }
      if (corners.size() != 3)
        throw std::runtime_error("load_obj: " + path + ": line " + std::to_string(line_no) +
                                 ": only triangles supported (got " +
                                 std::to_string(corners.size()) + " corners)");
      raw_faces.push_back({corners[0], corners[1], corners[2]});
      face_lines.push_back(line_no);
    }
  }

  // When every corner is an aligned i/i/i triple (what save_obj writes), keep
  // the file's vertex order so round trips preserve indices. Otherwise weld
  // unique v/vt/vn triples in face-visit order.
  bool aligned = positions.size() == uvs.size() && positions.size() == normals.size();
  for (const auto& fc : raw_faces)
    for (const auto& c : fc) aligned = aligned && c.v == c.vt && c.v == c.vn;

  TriangleMesh mesh;
  if (aligned) {
    mesh.vertex_positions = positions;
    mesh.vertex_uvs = uvs;
    for (const auto& n : normals) mesh.vertex_normals.push_back(normalize(n));
  }
  std::map<Corner, int> remap;
  for (size_t fi = 0; fi < raw_faces.size(); ++fi) {
    std::array<int, 3> face;
    for (int k = 0; k < 3; ++k) {
      const Corner& c = raw_faces[fi][k];
      if (aligned) {
        face[k] = c.v;
        continue;
      }
      auto [it, inserted] = remap.try_emplace(c, static_cast<int>(mesh.vertex_positions.size()));
      if (inserted) {
        mesh.vertex_positions.push_back(positions[c.v]);
        mesh.vertex_uvs.push_back(uvs[c.vt]);
        mesh.vertex_normals.push_back(normalize(normals[c.vn]));
      }
      face[k] = it->second;
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      throw std::runtime_error("load_obj: " + path + ": line " + std::to_string(face_lines[fi]) +
                               ": degenerate face");
    mesh.face_indices.push_back(face);
  }
  mesh.validate();
  return mesh;
}

inline void save_skinning_weights(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_skinning_weights: cannot open " + path);
  f.precision(12);
  for (const auto& row : mesh.skinning_weights) {
    for (size_t j = 0; j < row.size(); ++j) f << (j ? " " : "") << row[j];
    f << "\n";
  }
}

inline void load_skinning_weights(const std::string& path, TriangleMesh& mesh) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_skinning_weights: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<double> row;
    double w;
    while (ss >> w) row.push_back(w);
    rows.push_back(std::move(row));
  }
  if (rows.size() != mesh.vertex_count())
    throw std::runtime_error("load_skinning_weights: " + path + ": row count " +
                             std::to_string(rows.size()) + " != vertex count " +
                             std::to_string(mesh.vertex_count()));
  mesh.skinning_weights = std::move(rows);
  mesh.bone_count = mesh.skinning_weights.empty() ? 0
                                                  : static_cast<int>(mesh.skinning_weights[0].size());
  mesh.validate();
}

}  // namespace dis

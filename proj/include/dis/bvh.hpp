#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "dis/mesh.hpp"
#include "dis/vec.hpp"

namespace dis {

struct Ray {
  Vec3 origin;
  Vec3 direction;  // need not be unit
  double t_min = 0;
  double t_max = std::numeric_limits<double>::max();
};

// Möller–Trumbore, no backface culling.
inline bool ray_triangle_hit(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c,
                             double* t_out = nullptr) {
  constexpr double eps = 1e-14;
  Vec3 e1 = b - a, e2 = c - a;
  Vec3 p = cross(ray.direction, e2);
  double det = dot(e1, p);
  if (std::abs(det) < eps) return false;
  double inv_det = 1.0 / det;
  Vec3 s = ray.origin - a;
  double u = dot(s, p) * inv_det;
  if (u < 0 || u > 1) return false;
  Vec3 q = cross(s, e1);
  double v = dot(ray.direction, q) * inv_det;
  if (v < 0 || u + v > 1) return false;
  double t = dot(e2, q) * inv_det;
  if (t < ray.t_min || t > ray.t_max) return false;
  if (t_out) *t_out = t;
  return true;
}

// Median-split BVH for any-hit queries against a fixed triangle set.
class Bvh {
 public:
  explicit Bvh(const TriangleMesh& mesh) {
    size_t nf = mesh.face_count();
    tris_.resize(nf);
    for (size_t f = 0; f < nf; ++f) {
      const auto& face = mesh.face_indices[f];
      tris_[f] = {mesh.vertex_positions[face[0]], mesh.vertex_positions[face[1]],
                  mesh.vertex_positions[face[2]]};
    }
    order_.resize(nf);
    for (size_t f = 0; f < nf; ++f) order_[f] = static_cast<int>(f);
    if (nf > 0) {
      nodes_.reserve(2 * nf);
      build(0, static_cast<int>(nf));
    }
  }

  bool any_hit(const Ray& ray) const {
    if (nodes_.empty()) return false;
    Vec3 inv_dir{ray.direction.x != 0 ? 1.0 / ray.direction.x : 1e30,
                 ray.direction.y != 0 ? 1.0 / ray.direction.y : 1e30,
                 ray.direction.z != 0 ? 1.0 / ray.direction.z : 1e30};
    int stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
      const Node& node = nodes_[stack[--sp]];
      if (!box_hit(node, ray, inv_dir)) continue;
      if (node.count > 0) {
        for (int i = node.first; i < node.first + node.count; ++i) {
          const Tri& t = tris_[order_[i]];
          if (ray_triangle_hit(ray, t.a, t.b, t.c)) return true;
        }
      } else {
        stack[sp++] = node.first;
        stack[sp++] = node.right;
      }
    }
    return false;
  }

 private:
  struct Tri {
    Vec3 a, b, c;
    Vec3 centroid() const { return (a + b + c) / 3.0; }
  };
  struct Node {
    Vec3 lo, hi;
    int first = 0;  // leaf: first index into order_; inner: left child index
    int count = 0;  // leaf triangle count; 0 for inner nodes
    int right = -1;  // inner: right child index
  };

  int build(int begin, int end) {
    int ni = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    Vec3 clo = lo, chi = hi;
    for (int i = begin; i < end; ++i) {
      const Tri& t = tris_[order_[i]];
      lo = min(min(lo, t.a), min(t.b, t.c));
      hi = max(max(hi, t.a), max(t.b, t.c));
      clo = min(clo, t.centroid());
      chi = max(chi, t.centroid());
    }
    nodes_[ni].lo = lo;
    nodes_[ni].hi = hi;
    int count = end - begin;
    Vec3 extent = chi - clo;
    int axis = extent.x > extent.y ? (extent.x > extent.z ? 0 : 2) : (extent.y > extent.z ? 1 : 2);
    if (count <= 4 || extent[axis] <= 0) {
      nodes_[ni].first = begin;
      nodes_[ni].count = count;
      return ni;
    }
    int mid = begin + count / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int x, int y) {
                       return tris_[x].centroid()[axis] < tris_[y].centroid()[axis];
                     });
    int left = build(begin, mid);
    int right = build(mid, end);
    nodes_[ni].first = left;
    nodes_[ni].right = right;
    nodes_[ni].count = 0;
    return ni;
  }

  static bool box_hit(const Node& n, const Ray& ray, const Vec3& inv_dir) {
    double t0 = ray.t_min, t1 = ray.t_max;
    for (int a = 0; a < 3; ++a) {
      double ta = (n.lo[a] - ray.origin[a]) * inv_dir[a];
      double tb = (n.hi[a] - ray.origin[a]) * inv_dir[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    return true;
  }

  std::vector<Tri> tris_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

// Reference all-triangle intersection, used as the correctness oracle.
inline bool brute_force_any_hit(const TriangleMesh& mesh, const Ray& ray) {
  for (const auto& f : mesh.face_indices) {
    if (ray_triangle_hit(ray, mesh.vertex_positions[f[0]], mesh.vertex_positions[f[1]],
                         mesh.vertex_positions[f[2]]))
      return true;
  }
  return false;
}

}  // namespace dis

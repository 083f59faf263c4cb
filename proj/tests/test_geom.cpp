#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "dis/mesh.hpp"
#include "dis/shapes.hpp"

using namespace dis;

// Welded axis-aligned cube: 8 shared vertices, 12 faces wound outward.
static TriangleMesh welded_cube() {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertex_positions.push_back({i & 1 ? 1.0 : -1.0, i & 2 ? 1.0 : -1.0, i & 4 ? 1.0 : -1.0});
  m.vertex_uvs.assign(8, {0.5, 0.5});
  int quads[6][4] = {{1, 3, 7, 5}, {0, 4, 6, 2}, {2, 6, 7, 3},
                     {0, 1, 5, 4}, {4, 5, 7, 6}, {0, 2, 3, 1}};
  // fan each quad around its center vertex so every corner sees the same
  // incident area on each adjacent face
  for (auto& q : quads) {
    Vec3 center{0, 0, 0};
    for (int i : q) center += m.vertex_positions[i];
    center = center / 4.0;
    int ci = static_cast<int>(m.vertex_positions.size());
    m.vertex_positions.push_back(center);
    m.vertex_uvs.push_back({0.5, 0.5});
    for (int k = 0; k < 4; ++k) m.face_indices.push_back({q[k], q[(k + 1) % 4], ci});
  }
  update_vertex_normals(m);
  return m;
}

TEST_CASE("vertex normals on the unit cube point along (±1,±1,±1)/sqrt(3)") {
  TriangleMesh cube = welded_cube();
  for (size_t v = 0; v < 8; ++v) {
    Vec3 corner = normalize(cube.vertex_positions[v]);
    CHECK(dot(cube.vertex_normals[v], corner) == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("single CCW triangle in z=0 gets +z normals") {
  TriangleMesh mesh;
  mesh.vertex_positions = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  mesh.vertex_uvs = {{0, 0}, {1, 0}, {0, 1}};
  mesh.face_indices = {{0, 1, 2}};
  update_vertex_normals(mesh);
  for (const auto& n : mesh.vertex_normals) {
    CHECK(n.x == 0.0);
    CHECK(n.y == 0.0);
    CHECK(n.z == 1.0);
  }
}

TEST_CASE("icosphere normals are radial within 5 degrees") {
  TriangleMesh sphere = make_icosphere(2);  // 320 faces
  REQUIRE(sphere.face_count() == 320);
  double max_angle = 0;
  for (size_t v = 0; v < sphere.vertex_count(); ++v) {
    Vec3 radial = normalize(sphere.vertex_positions[v]);
    double angle = rad_to_deg(std::acos(clamp(dot(sphere.vertex_normals[v], radial), -1.0, 1.0)));
    max_angle = std::max(max_angle, angle);
  }
  CHECK(max_angle < 5.0);
}

TEST_CASE("vertex normals are unit length") {
  TriangleMesh sphere = make_icosphere(1);
  for (const auto& n : sphere.vertex_normals) CHECK(length(n) == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("apply_vertex_offsets") {
  SECTION("zero offsets are the identity") {
    TriangleMesh sphere = make_icosphere(1);
    VertexOffsets zero{std::vector<double>(sphere.vertex_count(), 0.0)};
    TriangleMesh out = apply_vertex_offsets(sphere, zero);
    for (size_t v = 0; v < sphere.vertex_count(); ++v)
      CHECK(out.vertex_positions[v] == sphere.vertex_positions[v]);
  }
  SECTION("direct formula") {
    TriangleMesh mesh;
    mesh.vertex_positions = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    mesh.vertex_uvs = {{0, 0}, {1, 0}, {0, 1}};
    mesh.face_indices = {{0, 1, 2}};
    update_vertex_normals(mesh);  // all (0,0,1)
    VertexOffsets l{{0.5, 0.0, 0.0}};
    TriangleMesh out = apply_vertex_offsets(mesh, l);
    CHECK(out.vertex_positions[0].z == Catch::Approx(0.5));
    CHECK(out.vertex_positions[1].z == 0.0);
  }
  SECTION("uniform offset on the unit icosphere inflates the radius") {
    TriangleMesh sphere = make_icosphere(2);
    VertexOffsets l{std::vector<double>(sphere.vertex_count(), 0.1)};
    TriangleMesh out = apply_vertex_offsets(sphere, l);
    for (const auto& p : out.vertex_positions) {
      CHECK(length(p) >= 1.099);
      CHECK(length(p) <= 1.101);
    }
  }
  SECTION("length mismatch throws") {
    TriangleMesh sphere = make_icosphere(1);
    VertexOffsets l{{0.1, 0.2}};
    CHECK_THROWS_AS(apply_vertex_offsets(sphere, l), ArgumentError);
  }
  SECTION("applying l then -l with frozen normals restores positions") {
    TriangleMesh sphere = make_icosphere(1);
    std::vector<double> vals(sphere.vertex_count());
    for (size_t v = 0; v < vals.size(); ++v) vals[v] = 0.01 * std::sin(static_cast<double>(v));
    TriangleMesh fwd = apply_vertex_offsets(sphere, {vals});
    fwd.vertex_normals = sphere.vertex_normals;  // hold normals fixed
    std::vector<double> neg = vals;
    for (auto& x : neg) x = -x;
    TriangleMesh back = apply_vertex_offsets(fwd, {neg});
    for (size_t v = 0; v < sphere.vertex_count(); ++v)
      CHECK(length(back.vertex_positions[v] - sphere.vertex_positions[v]) < 1e-12);
  }
}

TEST_CASE("pose_mesh linear blend skinning") {
  TriangleMesh mesh = make_plane_grid(2, 2, 1, 1);
  mesh.bone_count = 2;
  mesh.skinning_weights.assign(mesh.vertex_count(), {0.5, 0.5});

  SECTION("identity transforms are a bitwise no-op") {
    Pose pose{{RigidTransform::identity(), RigidTransform::identity()}, 0};
    TriangleMesh out = pose_mesh(mesh, pose);
    for (size_t v = 0; v < mesh.vertex_count(); ++v)
      CHECK(out.vertex_positions[v] == mesh.vertex_positions[v]);
  }
  SECTION("single bone translation shifts every vertex") {
    TriangleMesh single = mesh;
    single.bone_count = 1;
    single.skinning_weights.assign(single.vertex_count(), {1.0});
    Pose pose{{RigidTransform{Mat3::identity(), {1, 2, 3}}}, 0};
    TriangleMesh out = pose_mesh(single, pose);
    for (size_t v = 0; v < mesh.vertex_count(); ++v) {
      Vec3 d = out.vertex_positions[v] - mesh.vertex_positions[v];
      CHECK(length(d - Vec3{1, 2, 3}) < 1e-12);
    }
  }
  SECTION("two half-weight bones average their translations") {
    Pose pose{{RigidTransform{Mat3::identity(), {2, 0, 0}},
               RigidTransform{Mat3::identity(), {0, 4, 0}}},
              0};
    TriangleMesh out = pose_mesh(mesh, pose);
    for (size_t v = 0; v < mesh.vertex_count(); ++v) {
      Vec3 d = out.vertex_positions[v] - mesh.vertex_positions[v];
      CHECK(length(d - Vec3{1, 2, 0}) < 1e-12);
    }
  }
  SECTION("missing weights with bones throws") {
    TriangleMesh bare = make_plane_grid(2, 2, 1, 1);
    Pose pose{{RigidTransform{Mat3::identity(), {1, 0, 0}}}, 0};
    CHECK_THROWS_AS(pose_mesh(bare, pose), ArgumentError);
  }
}

TEST_CASE("mesh_regularizers") {
  SECTION("unit-edge mesh with target 0 has edge loss 1") {
    TriangleMesh mesh;
    mesh.vertex_positions = {{0, 0, 0}, {1, 0, 0}, {0.5, std::sqrt(3) / 2, 0}};
    mesh.vertex_uvs = {{0, 0}, {1, 0}, {0.5, 1}};
    mesh.face_indices = {{0, 1, 2}};
    update_vertex_normals(mesh);
    auto r = mesh_regularizers(mesh, 0.0);
    CHECK(r.edge_loss == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("planar grid is flat: zero normal loss, zero interior laplacian") {
    TriangleMesh mesh = make_plane_grid(4, 4, 1, 1);
    auto r = mesh_regularizers(mesh, 0.25);
    CHECK(r.normal_consistency_loss == Catch::Approx(0.0).margin(1e-12));
    // interior vertices of a symmetric grid have zero uniform-Laplacian displacement
    std::map<int, int> valence;
    for (const auto& f : mesh.face_indices)
      for (int k = 0; k < 3; ++k) valence[f[k]]++;
  }
  SECTION("displacing one vertex increases all three losses") {
    TriangleMesh sphere = make_icosphere(1);
    auto base = mesh_regularizers(sphere, 0.0);
    TriangleMesh bumped = sphere;
    bumped.vertex_positions[7] += 0.2 * normalize(bumped.vertex_positions[7]);
    auto r = mesh_regularizers(bumped, 0.0);
    CHECK(r.edge_loss > base.edge_loss);
    CHECK(r.normal_consistency_loss > base.normal_consistency_loss);
    CHECK(r.laplacian_loss > base.laplacian_loss);
  }
}

TEST_CASE("chamfer_and_p2s") {
  SECTION("self distance: P2S exactly 0, deterministic per seed") {
    TriangleMesh sphere = make_icosphere(1);
    auto r1 = chamfer_and_p2s(sphere, sphere, 500, 11);
    auto r2 = chamfer_and_p2s(sphere, sphere, 500, 11);
    CHECK(r1.p2s < 1e-12);  // closest-point projection noise only
    CHECK(r1.chamfer == r2.chamfer);
  }
  SECTION("parallel unit squares at distance d") {
    TriangleMesh a = make_plane_grid(1, 1, 1, 1);
    TriangleMesh b = make_plane_grid(1, 1, 1, 1);
    double d = 0.37;
    for (auto& p : b.vertex_positions) p.z += d;
    auto r = chamfer_and_p2s(a, b, 400, 3);
    CHECK(r.p2s == Catch::Approx(d).margin(1e-6));
  }
  SECTION("concentric spheres radius 1 and 1.05") {
    TriangleMesh a = make_icosphere(3);
    TriangleMesh b = make_icosphere(3, 1.05);
    auto r = chamfer_and_p2s(a, b, 2000, 5);
    CHECK(r.p2s == Catch::Approx(0.05).margin(0.005));
  }
  SECTION("empty mesh throws") {
    TriangleMesh empty;
    CHECK_THROWS_AS(chamfer_and_p2s(empty, make_icosphere(0), 10, 1), ArgumentError);
  }
}

TEST_CASE("OBJ subset round-trip with skinning sidecar") {
  auto dir = std::filesystem::temp_directory_path() / "dis_geom_test";
  std::filesystem::create_directories(dir);
  TriangleMesh mesh = make_plane_grid(3, 3, 1, 1);
  mesh.bone_count = 2;
  mesh.skinning_weights.assign(mesh.vertex_count(), {0.25, 0.75});

  std::string obj = (dir / "patch.obj").string();
  std::string weights = (dir / "patch.weights.txt").string();
  save_obj(obj, mesh);
  save_skinning_weights(weights, mesh);

  TriangleMesh loaded = load_obj(obj);
  load_skinning_weights(weights, loaded);
  REQUIRE(loaded.vertex_count() == mesh.vertex_count());
  REQUIRE(loaded.face_count() == mesh.face_count());
  for (size_t v = 0; v < mesh.vertex_count(); ++v) {
    CHECK(length(loaded.vertex_positions[v] - mesh.vertex_positions[v]) < 1e-9);
    CHECK(std::abs(length(loaded.vertex_normals[v]) - 1.0) < 1e-9);
  }
  CHECK(loaded.bone_count == 2);

  SECTION("quads are rejected") {
    std::string quad = (dir / "quad.obj").string();
    std::ofstream f(quad);
    f << "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
      << "vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n"
      << "vn 0 0 1\nvn 0 0 1\nvn 0 0 1\nvn 0 0 1\n"
      << "f 1/1/1 2/2/2 3/3/3 4/4/4\n";
    f.close();
    CHECK_THROWS_WITH(load_obj(quad), Catch::Matchers::ContainsSubstring("triangles"));
  }
  SECTION("degenerate faces are rejected at load") {
    std::string bad = (dir / "degen.obj").string();
    std::ofstream f(bad);
    f << "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\n"
      << "f 1/1/1 1/1/1 2/1/1\n";
    f.close();
    CHECK_THROWS_WITH(load_obj(bad), Catch::Matchers::ContainsSubstring("degenerate"));
  }
}

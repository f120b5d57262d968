#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include <snse/mesh.hpp>
#include <snse/rng.hpp>

using namespace snse;

TEST_CASE("structured unit square mesh has the expected counts and metrics") {
  Mesh m = build_unit_square_mesh(2);
  CHECK(m.n_vertices() == 9);
  CHECK(m.n_triangles() == 8);
  CHECK(m.n_edges() == 16);  // 2*n*(n+1) horizontal+vertical + n^2 diagonals
  CHECK(m.total_area == Catch::Approx(1.0).epsilon(1e-14));
  CHECK(m.h_max == Catch::Approx(std::sqrt(2.0) / 2).epsilon(1e-14));
  CHECK(m.structured_n == 2);
  int boundary = 0;
  for (char b : m.boundary_vertex) boundary += b;
  CHECK(boundary == 8);
  for (int t = 0; t < m.n_triangles(); ++t) CHECK(m.triangle_area(t) > 0.0);
}

TEST_CASE("shape ratio is uniform across structured refinements") {
  double r4 = build_unit_square_mesh(4).shape_ratio;
  double r16 = build_unit_square_mesh(16).shape_ratio;
  CHECK(r4 == Catch::Approx(r16).epsilon(1e-12));
}

TEST_CASE("non-conforming connectivity is rejected") {
  // three triangles sharing one edge
  std::vector<Eigen::Vector2d> v{{0, 0}, {1, 0}, {0, 1}, {1, 1}, {0.5, -1}};
  std::vector<std::array<int, 3>> t{{0, 1, 2}, {1, 3, 2}, {0, 2, 4}};
  // edge (0,2) belongs to triangles 0 and 2 with consistent orientation;
  // make it triple-shared by adding another copy
  t.push_back({0, 2, 3});
  CHECK_THROWS_AS(make_mesh(v, t), std::runtime_error);
}

TEST_CASE("inverted triangles are rejected") {
  std::vector<Eigen::Vector2d> v{{0, 0}, {1, 0}, {0, 1}};
  std::vector<std::array<int, 3>> t{{0, 2, 1}};  // clockwise
  CHECK_THROWS_AS(make_mesh(v, t), std::runtime_error);
}

TEST_CASE("out-of-range vertex indices are rejected") {
  std::vector<Eigen::Vector2d> v{{0, 0}, {1, 0}, {0, 1}};
  std::vector<std::array<int, 3>> t{{0, 1, 7}};
  CHECK_THROWS_AS(make_mesh(v, t), std::runtime_error);
}

namespace {
std::multiset<std::pair<double, double>> vertex_set(const Mesh& m) {
  std::multiset<std::pair<double, double>> s;
  for (const auto& v : m.vertices)
    s.emplace(std::round(v.x() * 1e12) / 1e12, std::round(v.y() * 1e12) / 1e12);
  return s;
}
std::multiset<std::pair<double, double>> centroid_set(const Mesh& m) {
  std::multiset<std::pair<double, double>> s;
  for (const auto& t : m.triangles) {
    Eigen::Vector2d c = (m.vertices[t[0]] + m.vertices[t[1]] + m.vertices[t[2]]) / 3.0;
    s.emplace(std::round(c.x() * 1e12) / 1e12, std::round(c.y() * 1e12) / 1e12);
  }
  return s;
}
}  // namespace

TEST_CASE("red refinement of the structured mesh reproduces the finer structured mesh") {
  Mesh coarse = build_unit_square_mesh(3);
  Mesh fine = refine_uniform(coarse);
  Mesh direct = build_unit_square_mesh(6);
  CHECK(fine.structured_n == 6);
  CHECK(fine.n_triangles() == direct.n_triangles());
  CHECK(vertex_set(fine) == vertex_set(direct));
  CHECK(centroid_set(fine) == centroid_set(direct));
}

TEST_CASE("refinement children are nested in their parents") {
  Mesh coarse = build_unit_square_mesh(2);
  Mesh fine = refine_uniform(coarse);
  REQUIRE(fine.parent_map.size() == static_cast<std::size_t>(fine.n_triangles()));
  for (int c = 0; c < fine.n_triangles(); ++c) {
    int p = fine.parent_map[c];
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d bary = barycentric(coarse, p, fine.vertices[fine.triangles[c][k]]);
      CHECK(bary.minCoeff() >= -1e-12);
    }
  }
}

TEST_CASE("locate finds containing triangles for random and edge points") {
  Mesh m = build_unit_square_mesh(5);
  auto eng = make_engine(77);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    Eigen::Vector2d p{U(eng), U(eng)};
    Located loc = locate(m, p);
    Eigen::Vector3d bary = barycentric(m, loc.triangle, p);
    CHECK(bary.minCoeff() >= -1e-9);
    CHECK((loc.bary - bary).norm() < 1e-12);
  }
  // vertices and edge midpoints are boundary cases
  Located lv = locate(m, {0.4, 0.6});
  CHECK(lv.triangle >= 0);
  CHECK_THROWS_AS(locate(m, {1.5, 0.5}), std::runtime_error);
  CHECK_THROWS_AS(locate(m, {0.5, -0.2}), std::runtime_error);
}

TEST_CASE("barycentric coordinates reproduce vertices and sum to one") {
  Mesh m = build_unit_square_mesh(3);
  for (int t = 0; t < m.n_triangles(); ++t) {
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d b = barycentric(m, t, m.vertices[m.triangles[t][k]]);
      CHECK(b[k] == Catch::Approx(1.0).margin(1e-13));
      CHECK(b.sum() == Catch::Approx(1.0).margin(1e-13));
    }
  }
}

TEST_CASE("mesh text serialization round-trips") {
  Mesh m = build_unit_square_mesh(3);
  std::stringstream ss;
  save_mesh(m, ss);
  Mesh back = load_mesh(ss);
  REQUIRE(back.n_vertices() == m.n_vertices());
  REQUIRE(back.n_triangles() == m.n_triangles());
  for (int v = 0; v < m.n_vertices(); ++v)
    CHECK((back.vertices[v] - m.vertices[v]).norm() == 0.0);
  for (int t = 0; t < m.n_triangles(); ++t) CHECK(back.triangles[t] == m.triangles[t]);
  CHECK(back.n_edges() == m.n_edges());
}

TEST_CASE("load_mesh rejects malformed input") {
  std::stringstream bad("vertices 2 triangles 1\n0 0\n1 0\n0 1 2\n");
  CHECK_THROWS_AS(load_mesh(bad), std::runtime_error);
  std::stringstream junk("not a mesh");
  CHECK_THROWS_AS(load_mesh(junk), std::runtime_error);
}

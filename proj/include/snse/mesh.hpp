/// @file mesh.hpp
/// @brief Conforming triangulations of the unit square with nested uniform
///        (red) refinement and O(1)-ish point location.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace snse {

struct Mesh {
  std::vector<Eigen::Vector2d> vertices;
  std::vector<std::array<int, 3>> triangles;  // CCW vertex indices
  std::vector<std::array<int, 2>> edges;      // unique edges, sorted pairs
  std::vector<std::array<int, 3>> tri_edges;  // per triangle: edge ids for local
                                              // edges (0,1),(1,2),(2,0)
  std::vector<char> boundary_vertex;          // flag per vertex
  std::vector<char> boundary_edge;            // flag per edge
  std::vector<std::array<int, 2>> boundary_edge_list;
  std::vector<int> parent_map;  // child triangle -> parent triangle (empty at root)

  double h_max = 0.0;
  double shape_ratio = 0.0;  // max over triangles of diameter / inradius
  double total_area = 0.0;
  int structured_n = 0;  // subdivisions per side when built structured, else 0

  // point-location bins
  int bins_per_side = 0;
  Eigen::Vector2d bbox_min{0, 0}, bbox_max{1, 1};
  std::vector<std::vector<int>> bins;

  int n_vertices() const { return static_cast<int>(vertices.size()); }
  int n_triangles() const { return static_cast<int>(triangles.size()); }
  int n_edges() const { return static_cast<int>(edges.size()); }

  double triangle_area(int t) const {
    const auto& tri = triangles[t];
    Eigen::Vector2d a = vertices[tri[0]], b = vertices[tri[1]], c = vertices[tri[2]];
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
  }
};

namespace detail {

inline void build_topology(Mesh& m) {
  std::map<std::array<int, 2>, int> edge_id;
  std::vector<int> edge_count;
  m.tri_edges.assign(m.triangles.size(), {-1, -1, -1});
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    for (int le = 0; le < 3; ++le) {
      int a = tri[le], b = tri[(le + 1) % 3];
      std::array<int, 2> key{std::min(a, b), std::max(a, b)};
      auto it = edge_id.find(key);
      int id;
      if (it == edge_id.end()) {
        id = static_cast<int>(m.edges.size());
        edge_id.emplace(key, id);
        m.edges.push_back(key);
        edge_count.push_back(0);
      } else {
        id = it->second;
      }
      ++edge_count[id];
      m.tri_edges[t][le] = id;
    }
  }
  m.boundary_edge.assign(m.edges.size(), 0);
  m.boundary_vertex.assign(m.vertices.size(), 0);
  m.boundary_edge_list.clear();
  for (std::size_t e = 0; e < m.edges.size(); ++e) {
    if (edge_count[e] == 1) {
      m.boundary_edge[e] = 1;
      m.boundary_edge_list.push_back(m.edges[e]);
      m.boundary_vertex[m.edges[e][0]] = 1;
      m.boundary_vertex[m.edges[e][1]] = 1;
    } else if (edge_count[e] != 2) {
      throw std::runtime_error("mesh: non-conforming, edge shared by " +
                               std::to_string(edge_count[e]) + " triangles");
    }
  }
}

inline void build_metrics(Mesh& m) {
  m.h_max = 0.0;
  m.shape_ratio = 0.0;
  m.total_area = 0.0;
  for (int t = 0; t < m.n_triangles(); ++t) {
    double area = m.triangle_area(t);
    if (area <= 0.0)
      throw std::runtime_error("mesh: triangle " + std::to_string(t) +
                               " has non-positive area");
    m.total_area += area;
    const auto& tri = m.triangles[t];
    double la = (m.vertices[tri[1]] - m.vertices[tri[0]]).norm();
    double lb = (m.vertices[tri[2]] - m.vertices[tri[1]]).norm();
    double lc = (m.vertices[tri[0]] - m.vertices[tri[2]]).norm();
    double diam = std::max({la, lb, lc});
    double inradius = 2.0 * area / (la + lb + lc);
    m.h_max = std::max(m.h_max, diam);
    m.shape_ratio = std::max(m.shape_ratio, diam / inradius);
  }
}

inline void build_bins(Mesh& m) {
  m.bbox_min = m.vertices.front();
  m.bbox_max = m.vertices.front();
  for (const auto& v : m.vertices) {
    m.bbox_min = m.bbox_min.cwiseMin(v);
    m.bbox_max = m.bbox_max.cwiseMax(v);
  }
  m.bins_per_side = std::max(1, static_cast<int>(std::sqrt(m.n_triangles() / 2.0)));
  m.bins.assign(static_cast<std::size_t>(m.bins_per_side) * m.bins_per_side, {});
  Eigen::Vector2d ext = m.bbox_max - m.bbox_min;
  auto bin_of = [&](double x, double lo, double e) {
    int i = static_cast<int>((x - lo) / e * m.bins_per_side);
    return std::clamp(i, 0, m.bins_per_side - 1);
  };
  for (int t = 0; t < m.n_triangles(); ++t) {
    const auto& tri = m.triangles[t];
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (int k = 0; k < 3; ++k) {
      x0 = std::min(x0, m.vertices[tri[k]].x());
      x1 = std::max(x1, m.vertices[tri[k]].x());
      y0 = std::min(y0, m.vertices[tri[k]].y());
      y1 = std::max(y1, m.vertices[tri[k]].y());
    }
    int i0 = bin_of(x0, m.bbox_min.x(), ext.x()), i1 = bin_of(x1, m.bbox_min.x(), ext.x());
    int j0 = bin_of(y0, m.bbox_min.y(), ext.y()), j1 = bin_of(y1, m.bbox_min.y(), ext.y());
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i)
        m.bins[static_cast<std::size_t>(j) * m.bins_per_side + i].push_back(t);
  }
}

}  // namespace detail

/// Validate raw vertex/triangle lists and derive topology, metrics and bins.
/// Throws on non-conforming connectivity or inverted triangles.
inline Mesh make_mesh(std::vector<Eigen::Vector2d> vertices,
                      std::vector<std::array<int, 3>> triangles) {
  Mesh m;
  m.vertices = std::move(vertices);
  m.triangles = std::move(triangles);
  for (const auto& tri : m.triangles)
    for (int v : tri)
      if (v < 0 || v >= m.n_vertices())
        throw std::runtime_error("mesh: vertex index out of range");
  detail::build_topology(m);
  detail::build_metrics(m);
  detail::build_bins(m);
  return m;
}

/// Structured triangulation of the unit square: n x n cells, each split along
/// the lower-left -> upper-right diagonal. (n+1)^2 vertices, 2n^2 triangles.
inline Mesh build_unit_square_mesh(int n) {
  if (n < 1) throw std::invalid_argument("build_unit_square_mesh: n must be >= 1");
  std::vector<Eigen::Vector2d> verts;
  verts.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      verts.emplace_back(static_cast<double>(i) / n, static_cast<double>(j) / n);
  std::vector<std::array<int, 3>> tris;
  tris.reserve(static_cast<std::size_t>(2) * n * n);
  auto vid = [n](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      int v00 = vid(i, j), v10 = vid(i + 1, j), v11 = vid(i + 1, j + 1), v01 = vid(i, j + 1);
      tris.push_back({v00, v10, v11});
      tris.push_back({v00, v11, v01});
    }
  Mesh m = make_mesh(std::move(verts), std::move(tris));
  m.structured_n = n;
  return m;
}

/// Red refinement: every triangle is split into four similar children via its
/// edge midpoints. The child mesh is nested in the parent; parent_map records
/// the containing coarse triangle per child.
inline Mesh refine_uniform(const Mesh& coarse) {
  std::vector<Eigen::Vector2d> verts = coarse.vertices;
  verts.reserve(verts.size() + coarse.edges.size());
  for (const auto& e : coarse.edges)
    verts.push_back(0.5 * (coarse.vertices[e[0]] + coarse.vertices[e[1]]));
  const int nv = coarse.n_vertices();
  std::vector<std::array<int, 3>> tris;
  std::vector<int> parent;
  tris.reserve(static_cast<std::size_t>(4) * coarse.n_triangles());
  for (int t = 0; t < coarse.n_triangles(); ++t) {
    const auto& tri = coarse.triangles[t];
    int a = tri[0], b = tri[1], c = tri[2];
    int mab = nv + coarse.tri_edges[t][0];
    int mbc = nv + coarse.tri_edges[t][1];
    int mca = nv + coarse.tri_edges[t][2];
    tris.push_back({a, mab, mca});
    tris.push_back({mab, b, mbc});
    tris.push_back({mca, mbc, c});
    tris.push_back({mab, mbc, mca});
    for (int k = 0; k < 4; ++k) parent.push_back(t);
  }
  Mesh fine = make_mesh(std::move(verts), std::move(tris));
  fine.parent_map = std::move(parent);
  if (coarse.structured_n > 0) fine.structured_n = 2 * coarse.structured_n;
  return fine;
}

struct Located {
  int triangle = -1;
  Eigen::Vector3d bary{0, 0, 0};  // barycentric w.r.t. local vertices 0,1,2
};

/// Barycentric coordinates of p in triangle t (may be negative outside).
inline Eigen::Vector3d barycentric(const Mesh& m, int t, const Eigen::Vector2d& p) {
  const auto& tri = m.triangles[t];
  Eigen::Vector2d a = m.vertices[tri[0]], b = m.vertices[tri[1]], c = m.vertices[tri[2]];
  double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  double l1 = ((p.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (p.y() - a.y())) / det;
  double l2 = ((b.x() - a.x()) * (p.y() - a.y()) - (p.x() - a.x()) * (b.y() - a.y())) / det;
  return {1.0 - l1 - l2, l1, l2};
}

/// Find the triangle containing p (tolerance 1e-12 in barycentric units,
/// lowest triangle index wins on shared edges). Throws when p lies outside
/// every triangle.
inline Located locate(const Mesh& m, const Eigen::Vector2d& p) {
  Eigen::Vector2d ext = m.bbox_max - m.bbox_min;
  auto bin_of = [&](double x, double lo, double e) {
    int i = static_cast<int>((x - lo) / e * m.bins_per_side);
    return std::clamp(i, 0, m.bins_per_side - 1);
  };
  int bi = bin_of(p.x(), m.bbox_min.x(), ext.x());
  int bj = bin_of(p.y(), m.bbox_min.y(), ext.y());
  const double tol = 1e-12;
  int best = -1;
  double best_min = -1e300;
  Eigen::Vector3d best_bary;
  for (int t : m.bins[static_cast<std::size_t>(bj) * m.bins_per_side + bi]) {
    Eigen::Vector3d l = barycentric(m, t, p);
    double lm = l.minCoeff();
    if (lm >= -tol) return {t, l};
    if (lm > best_min) { best_min = lm; best = t; best_bary = l; }
  }
  // p may sit on a bin boundary with roundoff; widen to neighbouring bins.
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di) {
      int i = bi + di, j = bj + dj;
      if (i < 0 || j < 0 || i >= m.bins_per_side || j >= m.bins_per_side) continue;
      if (i == bi && j == bj) continue;
      for (int t : m.bins[static_cast<std::size_t>(j) * m.bins_per_side + i]) {
        Eigen::Vector3d l = barycentric(m, t, p);
        double lm = l.minCoeff();
        if (lm >= -tol) return {t, l};
        if (lm > best_min) { best_min = lm; best = t; best_bary = l; }
      }
    }
  if (best >= 0 && best_min >= -1e-9) return {best, best_bary};
  throw std::runtime_error("locate: point (" + std::to_string(p.x()) + ", " +
                           std::to_string(p.y()) + ") outside the mesh");
}

/// Plain-text export: "vertices N triangles T", N coordinate lines, T index
/// triples.
inline void save_mesh(const Mesh& m, std::ostream& out) {
  out.precision(17);
  out << "vertices " << m.n_vertices() << " triangles " << m.n_triangles() << "\n";
  for (const auto& v : m.vertices) out << v.x() << " " << v.y() << "\n";
  for (const auto& t : m.triangles) out << t[0] << " " << t[1] << " " << t[2] << "\n";
}

inline Mesh load_mesh(std::istream& in) {
  std::string kw1, kw2;
  int nv = 0, nt = 0;
  if (!(in >> kw1 >> nv >> kw2 >> nt) || kw1 != "vertices" || kw2 != "triangles")
    throw std::runtime_error("load_mesh: bad header");
  std::vector<Eigen::Vector2d> verts(nv);
  for (auto& v : verts)
    if (!(in >> v.x() >> v.y())) throw std::runtime_error("load_mesh: bad vertex line");
  std::vector<std::array<int, 3>> tris(nt);
  for (auto& t : tris)
    if (!(in >> t[0] >> t[1] >> t[2])) throw std::runtime_error("load_mesh: bad triangle line");
  return make_mesh(std::move(verts), std::move(tris));
}

inline void save_mesh(const Mesh& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_mesh: cannot open " + path);
  save_mesh(m, f);
}

inline Mesh load_mesh(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_mesh: cannot open " + path);
  return load_mesh(f);
}

}  // namespace snse

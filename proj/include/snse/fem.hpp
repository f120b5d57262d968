/// @file fem.hpp
/// @brief P2-vector / P0 mixed finite elements on triangles: degree-of-freedom
///        maps with Dirichlet elimination, sparse assembly of mass, stiffness,
///        divergence-coupling and convection forms, and field evaluation.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <functional>
#include <stdexcept>
#include <vector>

#include "snse/mesh.hpp"
#include "snse/quadrature.hpp"

namespace snse {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using VectorField = std::function<Eigen::Vector2d(const Eigen::Vector2d&)>;
using ScalarField = std::function<double(const Eigen::Vector2d&)>;

// ---------------------------------------------------------------------------
// P2 shape functions on the reference triangle (0,0)-(1,0)-(0,1).
// Local node order: vertices 0,1,2 then midpoints of edges (0,1),(1,2),(2,0).
// ---------------------------------------------------------------------------

inline std::array<double, 6> p2_values(double xi, double eta) {
  double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
  return {l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
          4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0};
}

inline std::array<Eigen::Vector2d, 6> p2_ref_grads(double xi, double eta) {
  double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
  Eigen::Vector2d g0(-1, -1), g1(1, 0), g2(0, 1);
  return {(4 * l0 - 1) * g0, (4 * l1 - 1) * g1, (4 * l2 - 1) * g2,
          4 * (l0 * g1 + l1 * g0), 4 * (l1 * g2 + l2 * g1), 4 * (l2 * g0 + l0 * g2)};
}

// ---------------------------------------------------------------------------
// DofMap
// ---------------------------------------------------------------------------

/// Velocity nodes are mesh vertices followed by edge midpoints; each node
/// carries two components (dof = 2*node + comp). Pressure carries one dof per
/// triangle; the zero-mean constraint vector is the triangle areas.
struct DofMap {
  int n_nodes = 0;
  int n_velocity_dofs = 0;
  int n_pressure = 0;
  int n_free = 0;
  std::vector<char> dirichlet;   // per velocity dof
  std::vector<int> free_index;   // velocity dof -> free index, -1 if constrained
  std::vector<int> free_dofs;    // free index -> velocity dof
  std::vector<std::array<int, 6>> cell_nodes;  // per triangle, local P2 nodes
  Vector pressure_areas;         // zero-mean constraint (triangle areas)

  int node_dof(int node, int comp) const { return 2 * node + comp; }
};

inline DofMap build_dofmap(const Mesh& mesh) {
  DofMap d;
  d.n_nodes = mesh.n_vertices() + mesh.n_edges();
  d.n_velocity_dofs = 2 * d.n_nodes;
  d.n_pressure = mesh.n_triangles();
  d.dirichlet.assign(d.n_velocity_dofs, 0);
  for (int v = 0; v < mesh.n_vertices(); ++v)
    if (mesh.boundary_vertex[v]) d.dirichlet[2 * v] = d.dirichlet[2 * v + 1] = 1;
  for (int e = 0; e < mesh.n_edges(); ++e)
    if (mesh.boundary_edge[e]) {
      int node = mesh.n_vertices() + e;
      d.dirichlet[2 * node] = d.dirichlet[2 * node + 1] = 1;
    }
  d.free_index.assign(d.n_velocity_dofs, -1);
  for (int i = 0; i < d.n_velocity_dofs; ++i)
    if (!d.dirichlet[i]) {
      d.free_index[i] = static_cast<int>(d.free_dofs.size());
      d.free_dofs.push_back(i);
    }
  d.n_free = static_cast<int>(d.free_dofs.size());
  d.cell_nodes.resize(mesh.n_triangles());
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    const auto& te = mesh.tri_edges[t];
    d.cell_nodes[t] = {tri[0], tri[1], tri[2],
                       mesh.n_vertices() + te[0], mesh.n_vertices() + te[1],
                       mesh.n_vertices() + te[2]};
  }
  d.pressure_areas.resize(d.n_pressure);
  for (int t = 0; t < mesh.n_triangles(); ++t) d.pressure_areas[t] = mesh.triangle_area(t);
  return d;
}

/// Zero-pad a free-dof vector to the full dof numbering.
inline Vector to_full(const DofMap& d, const Vector& free) {
  Vector full = Vector::Zero(d.n_velocity_dofs);
  for (int i = 0; i < d.n_free; ++i) full[d.free_dofs[i]] = free[i];
  return full;
}

inline Vector to_free(const DofMap& d, const Vector& full) {
  Vector free(d.n_free);
  for (int i = 0; i < d.n_free; ++i) free[i] = full[d.free_dofs[i]];
  return free;
}

// ---------------------------------------------------------------------------
// Static operators
// ---------------------------------------------------------------------------

struct AssemblyDegrees {
  int mass = 4;        // P2 x P2 products
  int stiffness = 2;   // grad P2 x grad P2
  int convection = 5;  // P2 transport x grad P2 x P2 (exact skew identity)
};

/// Per-quadrature-point element data for the convection rule, precomputed once
/// per mesh so the transport matrix can be reassembled cheaply every step.
struct ConvectionCache {
  QuadratureRule rule;
  Eigen::Matrix<double, 6, Eigen::Dynamic> shapes;        // 6 x nq
  std::vector<Eigen::Matrix<double, 6, 2>> grads;         // [tri*nq + q]
  std::vector<double> scaled_weights;                     // area * w, [tri*nq + q]
};

struct AssembledOperators {
  SparseMatrix M;       // velocity mass, n_free x n_free, SPD
  SparseMatrix A;       // velocity stiffness, n_free x n_free, SPD on free dofs
  SparseMatrix B;       // divergence coupling, n_pressure x n_free
  SparseMatrix M_full;  // unconstrained mass over all velocity dofs
  AssemblyDegrees degrees;
  ConvectionCache conv;
};

namespace detail {

struct ElementGeometry {
  Eigen::Matrix2d jacobian;      // columns b-a, c-a
  Eigen::Matrix2d jinv_t;
  double area;
};

inline ElementGeometry element_geometry(const Mesh& mesh, int t) {
  const auto& tri = mesh.triangles[t];
  Eigen::Vector2d a = mesh.vertices[tri[0]], b = mesh.vertices[tri[1]],
                  c = mesh.vertices[tri[2]];
  ElementGeometry g;
  g.jacobian.col(0) = b - a;
  g.jacobian.col(1) = c - a;
  g.area = 0.5 * g.jacobian.determinant();
  g.jinv_t = g.jacobian.inverse().transpose();
  return g;
}

}  // namespace detail

inline AssembledOperators assemble_static(const Mesh& mesh, const DofMap& dof,
                                          AssemblyDegrees degrees = {}) {
  if (degrees.mass < 4)
    throw std::invalid_argument("assemble_static: mass quadrature must be exact to degree 4");
  if (degrees.stiffness < 2)
    throw std::invalid_argument("assemble_static: stiffness quadrature must be exact to degree 2");
  if (degrees.convection < 5)
    throw std::invalid_argument("assemble_static: convection quadrature must be exact to degree 5");

  AssembledOperators ops;
  ops.degrees = degrees;
  QuadratureRule mass_rule = triangle_rule(degrees.mass);
  QuadratureRule stiff_rule = triangle_rule(degrees.stiffness);

  using T = Eigen::Triplet<double>;
  std::vector<T> tm, ta, tb, tmf;
  const int nt = mesh.n_triangles();
  tm.reserve(static_cast<std::size_t>(nt) * 72);
  ta.reserve(static_cast<std::size_t>(nt) * 72);
  tb.reserve(static_cast<std::size_t>(nt) * 12);
  tmf.reserve(static_cast<std::size_t>(nt) * 72);

  // reference shape values for the mass rule
  const int nqm = static_cast<int>(mass_rule.points.size());
  Eigen::Matrix<double, 6, Eigen::Dynamic> mshapes(6, nqm);
  for (int q = 0; q < nqm; ++q) {
    auto v = p2_values(mass_rule.points[q].x(), mass_rule.points[q].y());
    for (int a = 0; a < 6; ++a) mshapes(a, q) = v[a];
  }

  for (int t = 0; t < nt; ++t) {
    auto geo = detail::element_geometry(mesh, t);
    const auto& nodes = dof.cell_nodes[t];

    Eigen::Matrix<double, 6, 6> mloc = Eigen::Matrix<double, 6, 6>::Zero();
    for (int q = 0; q < nqm; ++q)
      mloc += (geo.area * mass_rule.weights[q]) * (mshapes.col(q) * mshapes.col(q).transpose());

    Eigen::Matrix<double, 6, 6> aloc = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 2> bgrad_sum = Eigen::Matrix<double, 6, 2>::Zero();
    for (std::size_t q = 0; q < stiff_rule.points.size(); ++q) {
      auto rg = p2_ref_grads(stiff_rule.points[q].x(), stiff_rule.points[q].y());
      Eigen::Matrix<double, 6, 2> pg;
      for (int a = 0; a < 6; ++a) pg.row(a) = (geo.jinv_t * rg[a]).transpose();
      double w = geo.area * stiff_rule.weights[q];
      aloc += w * (pg * pg.transpose());
      bgrad_sum += w * pg;
    }

    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b)
        for (int c = 0; c < 2; ++c) {
          int gi = dof.node_dof(nodes[a], c), gj = dof.node_dof(nodes[b], c);
          tmf.emplace_back(gi, gj, mloc(a, b));
          int fi = dof.free_index[gi], fj = dof.free_index[gj];
          if (fi >= 0 && fj >= 0) {
            tm.emplace_back(fi, fj, mloc(a, b));
            ta.emplace_back(fi, fj, aloc(a, b));
          }
        }
    for (int b = 0; b < 6; ++b)
      for (int c = 0; c < 2; ++c) {
        int fj = dof.free_index[dof.node_dof(nodes[b], c)];
        if (fj >= 0) tb.emplace_back(t, fj, bgrad_sum(b, c));
      }
  }

  ops.M.resize(dof.n_free, dof.n_free);
  ops.M.setFromTriplets(tm.begin(), tm.end());
  ops.A.resize(dof.n_free, dof.n_free);
  ops.A.setFromTriplets(ta.begin(), ta.end());
  ops.B.resize(dof.n_pressure, dof.n_free);
  ops.B.setFromTriplets(tb.begin(), tb.end());
  ops.M_full.resize(dof.n_velocity_dofs, dof.n_velocity_dofs);
  ops.M_full.setFromTriplets(tmf.begin(), tmf.end());

  // convection cache
  ops.conv.rule = triangle_rule(degrees.convection);
  const int nqc = static_cast<int>(ops.conv.rule.points.size());
  ops.conv.shapes.resize(6, nqc);
  for (int q = 0; q < nqc; ++q) {
    auto v = p2_values(ops.conv.rule.points[q].x(), ops.conv.rule.points[q].y());
    for (int a = 0; a < 6; ++a) ops.conv.shapes(a, q) = v[a];
  }
  ops.conv.grads.resize(static_cast<std::size_t>(nt) * nqc);
  ops.conv.scaled_weights.resize(static_cast<std::size_t>(nt) * nqc);
  for (int t = 0; t < nt; ++t) {
    auto geo = detail::element_geometry(mesh, t);
    for (int q = 0; q < nqc; ++q) {
      auto rg = p2_ref_grads(ops.conv.rule.points[q].x(), ops.conv.rule.points[q].y());
      Eigen::Matrix<double, 6, 2> pg;
      for (int a = 0; a < 6; ++a) pg.row(a) = (geo.jinv_t * rg[a]).transpose();
      ops.conv.grads[static_cast<std::size_t>(t) * nqc + q] = pg;
      ops.conv.scaled_weights[static_cast<std::size_t>(t) * nqc + q] =
          geo.area * ops.conv.rule.weights[q];
    }
  }
  return ops;
}

/// Transport matrix N_theta(w): entries
///   int (w . grad phi_j) . phi_i dx + theta * int (div w) phi_j . phi_i dx
/// on free dofs, block-diagonal in the two velocity components. `w_free` must
/// live on the same dof map.
inline SparseMatrix assemble_convection(const Mesh& mesh, const DofMap& dof,
                                        const AssembledOperators& ops,
                                        const Vector& w_free, double theta) {
  if (w_free.size() != dof.n_free)
    throw std::invalid_argument("assemble_convection: transport field size mismatch");
  if (theta < 0.0 || theta > 1.0)
    throw std::invalid_argument("assemble_convection: theta must lie in [0,1]");

  const int nt = mesh.n_triangles();
  const int nqc = static_cast<int>(ops.conv.rule.points.size());
  using T = Eigen::Triplet<double>;
  std::vector<T> trip;
  trip.reserve(static_cast<std::size_t>(nt) * 72);

  for (int t = 0; t < nt; ++t) {
    const auto& nodes = dof.cell_nodes[t];
    Eigen::Matrix<double, 6, 2> wloc;  // nodal values of w on this element
    for (int a = 0; a < 6; ++a)
      for (int c = 0; c < 2; ++c) {
        int fi = dof.free_index[dof.node_dof(nodes[a], c)];
        wloc(a, c) = fi >= 0 ? w_free[fi] : 0.0;
      }
    Eigen::Matrix<double, 6, 6> nloc = Eigen::Matrix<double, 6, 6>::Zero();
    for (int q = 0; q < nqc; ++q) {
      const auto& pg = ops.conv.grads[static_cast<std::size_t>(t) * nqc + q];
      double w = ops.conv.scaled_weights[static_cast<std::size_t>(t) * nqc + q];
      Eigen::Vector2d wq = wloc.transpose() * ops.conv.shapes.col(q);
      double divw = (wloc.col(0).dot(pg.col(0))) + (wloc.col(1).dot(pg.col(1)));
      // column j carries (w . grad N_j) + theta div(w) N_j, row i carries N_i
      Eigen::Matrix<double, 6, 1> conv_j = pg * wq + theta * divw * ops.conv.shapes.col(q);
      nloc += w * (ops.conv.shapes.col(q) * conv_j.transpose());
    }
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b) {
        if (nloc(a, b) == 0.0) continue;
        for (int c = 0; c < 2; ++c) {
          int fi = dof.free_index[dof.node_dof(nodes[a], c)];
          int fj = dof.free_index[dof.node_dof(nodes[b], c)];
          if (fi >= 0 && fj >= 0) trip.emplace_back(fi, fj, nloc(a, b));
        }
      }
  }
  SparseMatrix N(dof.n_free, dof.n_free);
  N.setFromTriplets(trip.begin(), trip.end());
  return N;
}

// ---------------------------------------------------------------------------
// Loads, interpolation, projection onto P0, evaluation
// ---------------------------------------------------------------------------

/// Quadrature of int f . phi_i dx over all free velocity dofs.
inline Vector velocity_load(const Mesh& mesh, const DofMap& dof, const VectorField& f,
                            int quad_degree = 5) {
  QuadratureRule rule = triangle_rule(quad_degree);
  Vector load = Vector::Zero(dof.n_free);
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    auto geo = detail::element_geometry(mesh, t);
    const auto& tri = mesh.triangles[t];
    Eigen::Vector2d a = mesh.vertices[tri[0]];
    const auto& nodes = dof.cell_nodes[t];
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      Eigen::Vector2d x = a + geo.jacobian * rule.points[q];
      Eigen::Vector2d fx = f(x);
      auto vals = p2_values(rule.points[q].x(), rule.points[q].y());
      double w = geo.area * rule.weights[q];
      for (int n = 0; n < 6; ++n)
        for (int c = 0; c < 2; ++c) {
          int fi = dof.free_index[dof.node_dof(nodes[n], c)];
          if (fi >= 0) load[fi] += w * vals[n] * fx[c];
        }
    }
  }
  return load;
}

/// Nodal P2 interpolation of a smooth field (full dof vector, boundary nodes
/// included).
inline Vector interpolate_p2(const Mesh& mesh, const DofMap& dof, const VectorField& f) {
  Vector full = Vector::Zero(dof.n_velocity_dofs);
  for (int v = 0; v < mesh.n_vertices(); ++v) {
    Eigen::Vector2d fx = f(mesh.vertices[v]);
    full[2 * v] = fx.x();
    full[2 * v + 1] = fx.y();
  }
  for (int e = 0; e < mesh.n_edges(); ++e) {
    Eigen::Vector2d mid = 0.5 * (mesh.vertices[mesh.edges[e][0]] + mesh.vertices[mesh.edges[e][1]]);
    Eigen::Vector2d fx = f(mid);
    int node = mesh.n_vertices() + e;
    full[2 * node] = fx.x();
    full[2 * node + 1] = fx.y();
  }
  return full;
}

/// Exact L2 projection onto P0 (elementwise means) followed by the zero-mean
/// shift.
inline Vector project_pressure(const Mesh& mesh, const ScalarField& p, int quad_degree = 5) {
  QuadratureRule rule = triangle_rule(quad_degree);
  Vector proj(mesh.n_triangles());
  double mean = 0.0, total = 0.0;
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    auto geo = detail::element_geometry(mesh, t);
    const auto& tri = mesh.triangles[t];
    Eigen::Vector2d a = mesh.vertices[tri[0]];
    double v = 0.0;
    for (std::size_t q = 0; q < rule.points.size(); ++q)
      v += rule.weights[q] * p(a + geo.jacobian * rule.points[q]);
    proj[t] = v;  // elementwise mean (weights sum to 1)
    mean += v * geo.area;
    total += geo.area;
  }
  proj.array() -= mean / total;
  return proj;
}

/// Point evaluation of a P2 vector field and its gradient from a full dof
/// vector.
class FieldEvaluator {
 public:
  FieldEvaluator(const Mesh& mesh, const DofMap& dof, Vector full_coeffs)
      : mesh_(&mesh), dof_(&dof), coeffs_(std::move(full_coeffs)) {
    if (coeffs_.size() != dof.n_velocity_dofs)
      throw std::invalid_argument("FieldEvaluator: expected full dof vector");
  }

  Eigen::Vector2d value(const Eigen::Vector2d& p) const {
    Located loc = locate(*mesh_, p);
    return value_local(loc.triangle, loc.bary[1], loc.bary[2]);
  }

  /// Gradient, rows = components, cols = d/dx, d/dy.
  Eigen::Matrix2d gradient(const Eigen::Vector2d& p) const {
    Located loc = locate(*mesh_, p);
    return gradient_local(loc.triangle, loc.bary[1], loc.bary[2]);
  }

  Eigen::Vector2d value_local(int tri, double xi, double eta) const {
    auto vals = p2_values(xi, eta);
    const auto& nodes = dof_->cell_nodes[tri];
    Eigen::Vector2d out{0, 0};
    for (int n = 0; n < 6; ++n)
      for (int c = 0; c < 2; ++c) out[c] += vals[n] * coeffs_[dof_->node_dof(nodes[n], c)];
    return out;
  }

  Eigen::Matrix2d gradient_local(int tri, double xi, double eta) const {
    auto rg = p2_ref_grads(xi, eta);
    auto geo = detail::element_geometry(*mesh_, tri);
    const auto& nodes = dof_->cell_nodes[tri];
    Eigen::Matrix2d out = Eigen::Matrix2d::Zero();
    for (int n = 0; n < 6; ++n) {
      Eigen::Vector2d pg = geo.jinv_t * rg[n];
      for (int c = 0; c < 2; ++c) out.row(c) += coeffs_[dof_->node_dof(nodes[n], c)] * pg.transpose();
    }
    return out;
  }

  const Vector& coefficients() const { return coeffs_; }

 private:
  const Mesh* mesh_;
  const DofMap* dof_;
  Vector coeffs_;
};

/// Coordinate-format text dump of a sparse matrix (row col value per line).
inline void save_coo(const SparseMatrix& m, std::ostream& out) {
  out.precision(17);
  out << m.rows() << " " << m.cols() << " " << m.nonZeros() << "\n";
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      out << it.row() << " " << it.col() << " " << it.value() << "\n";
}

}  // namespace snse

/// @file linsolve.hpp
/// @brief Sparse saddle-point solves for the time stepper and projections,
///        plus a numerical discrete inf-sup constant.
///
/// The per-step velocity block is M + tau*mu*A + tau*N_theta(w); only the
/// transport part changes between steps. The step solver therefore factorizes
/// the Stokes saddle matrix once and treats the transport term by a
/// Stokes-preconditioned BiCGSTAB iteration, falling back to a direct
/// factorization of the full matrix when the iteration does not reach the
/// residual contract.
#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "snse/fem.hpp"
#include "snse/rng.hpp"

namespace snse {

struct SaddleSolution {
  Vector u;        // velocity coefficients (free dofs)
  Vector p;        // pressure coefficients (zero mean)
  double lambda = 0.0;  // zero-mean multiplier, ~0 at the solution
  int iterations = 0;
  bool used_fallback = false;
};

namespace detail {

/// Assemble [[K, c*B^T, 0], [B, 0, a], [0, a^T, 0]] with a the pressure-mean
/// constraint vector.
inline SparseMatrix build_saddle(const SparseMatrix& K, const SparseMatrix& B,
                                 const Vector& areas, double c) {
  const int nu = static_cast<int>(K.rows());
  const int np = static_cast<int>(B.rows());
  const int n = nu + np + 1;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(K.nonZeros() + 2 * B.nonZeros() + 2 * np);
  for (int k = 0; k < K.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(K, k); it; ++it)
      trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int k = 0; k < B.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(B, k); it; ++it) {
      trip.emplace_back(nu + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      trip.emplace_back(static_cast<int>(it.col()), nu + static_cast<int>(it.row()),
                        c * it.value());
    }
  for (int i = 0; i < np; ++i) {
    trip.emplace_back(nu + i, nu + np, areas[i]);
    trip.emplace_back(nu + np, nu + i, areas[i]);
  }
  SparseMatrix S(n, n);
  S.setFromTriplets(trip.begin(), trip.end());
  return S;
}

/// Preconditioned BiCGSTAB on op(x) = rhs; returns iteration count or -1 when
/// the tolerance was not reached.
inline int bicgstab(const std::function<Vector(const Vector&)>& op,
                    const std::function<Vector(const Vector&)>& prec, const Vector& rhs,
                    Vector& x, double tol, int max_iter, double rhs_norm = -1.0) {
  Vector r = prec(rhs - op(x));
  Vector r0 = r;
  // reference norm of the preconditioned rhs; callers that already hold
  // prec(rhs) pass its norm to avoid a redundant preconditioner solve
  if (rhs_norm < 0.0) rhs_norm = prec(rhs).norm();
  if (rhs_norm == 0.0) { x.setZero(); return 0; }
  double rho = 1, alpha = 1, omega = 1;
  Vector v = Vector::Zero(x.size()), pvec = Vector::Zero(x.size());
  for (int it = 1; it <= max_iter; ++it) {
    double rho_new = r0.dot(r);
    if (rho_new == 0.0) return -1;
    double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    pvec = r + beta * (pvec - omega * v);
    v = prec(op(pvec));
    alpha = rho / r0.dot(v);
    Vector s = r - alpha * v;
    if (s.norm() <= tol * rhs_norm) { x += alpha * pvec; return it; }
    Vector t = prec(op(s));
    double tt = t.squaredNorm();
    if (tt == 0.0) return -1;
    omega = t.dot(s) / tt;
    x += alpha * pvec + omega * s;
    r = s - omega * t;
    if (r.norm() <= tol * rhs_norm) return it;
    if (omega == 0.0) return -1;
  }
  return -1;
}

}  // namespace detail

/// One per (mesh level, tau, mu). Thread-confined: use one instance per
/// worker, the referenced static operators may be shared read-only.
class StepSolver {
 public:
  StepSolver(const Mesh& mesh, const DofMap& dof, const AssembledOperators& ops,
             double tau, double mu, double tolerance = 1e-10)
      : mesh_(&mesh), dof_(&dof), ops_(&ops), tau_(tau), mu_(mu), tol_(tolerance) {
    if (tau <= 0.0 || mu <= 0.0)
      throw std::invalid_argument("StepSolver: tau and mu must be positive");
    SparseMatrix K0 = ops.M + (tau * mu) * ops.A;
    stokes_ = detail::build_saddle(K0, ops.B, dof.pressure_areas, -tau_);
    stokes_lu_.compute(stokes_);
    if (stokes_lu_.info() != Eigen::Success)
      throw std::runtime_error("StepSolver: Stokes factorization failed");
  }

  double tau() const { return tau_; }
  double mu() const { return mu_; }

  /// Solve (M + tau*mu*A + tau*N_theta(w)) u - tau*B^T p = f, B u = 0 with
  /// zero-mean pressure. `w_free` may be empty for a pure Stokes step.
  SaddleSolution solve(const Vector& w_free, double theta, const Vector& f) {
    const int nu = dof_->n_free, np = dof_->n_pressure;
    Vector rhs = Vector::Zero(nu + np + 1);
    rhs.head(nu) = f;

    SparseMatrix N;
    bool has_transport = w_free.size() > 0 && w_free.lpNorm<Eigen::Infinity>() > 0.0;
    if (has_transport) N = assemble_convection(*mesh_, *dof_, *ops_, w_free, theta);

    auto apply = [&](const Vector& x) {
      Vector y = stokes_ * x;
      if (has_transport) y.head(nu) += tau_ * (N * x.head(nu));
      return y;
    };
    auto prec = [&](const Vector& x) { return stokes_lu_.solve(x).eval(); };

    SaddleSolution sol;
    Vector x = prec(rhs);  // Stokes solve; exact when no transport
    int its = 0;
    if (has_transport)
      its = detail::bicgstab(apply, prec, rhs, x, 1e-2 * tol_, 200, x.norm());
    double fnorm = f.norm();
    bool ok = its >= 0 && residual_ok(apply, rhs, x, fnorm);
    if (!ok) {
      // direct fallback on the full matrix
      SparseMatrix full = stokes_;
      if (has_transport) {
        SparseMatrix Nemb(nu + np + 1, nu + np + 1);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(N.nonZeros());
        for (int k = 0; k < N.outerSize(); ++k)
          for (SparseMatrix::InnerIterator it(N, k); it; ++it)
            trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                              tau_ * it.value());
        Nemb.setFromTriplets(trip.begin(), trip.end());
        full += Nemb;
      }
      Eigen::SparseLU<SparseMatrix> lu(full);
      if (lu.info() != Eigen::Success)
        throw std::runtime_error("StepSolver: factorization of the step matrix failed");
      x = lu.solve(rhs);
      sol.used_fallback = true;
      if (!residual_ok(apply, rhs, x, fnorm))
        throw std::runtime_error("StepSolver: residual contract not reached");
    }
    sol.iterations = std::max(its, 0);
    sol.u = x.head(nu);
    sol.p = x.segment(nu, np);
    sol.lambda = x[nu + np];
    return sol;
  }

  double tolerance() const { return tol_; }

 private:
  bool residual_ok(const std::function<Vector(const Vector&)>& apply, const Vector& rhs,
                   const Vector& x, double fnorm) const {
    Vector r = rhs - apply(x);
    double scale = std::max(fnorm, 1e-300);
    const int nu = dof_->n_free, np = dof_->n_pressure;
    return r.head(nu).norm() <= tol_ * scale && r.segment(nu, np).norm() <= tol_ * scale;
  }

  const Mesh* mesh_;
  const DofMap* dof_;
  const AssembledOperators* ops_;
  double tau_, mu_, tol_;
  SparseMatrix stokes_;
  Eigen::SparseLU<SparseMatrix> stokes_lu_;
};

/// L2-orthogonal projection onto the discretely divergence-free subspace,
/// realized as a (M, B) saddle solve with a pressure-space Lagrange
/// multiplier. The factorization is reused across calls.
class DivFreeProjector {
 public:
  DivFreeProjector(const Mesh& mesh, const DofMap& dof, const AssembledOperators& ops)
      : mesh_(&mesh), dof_(&dof), ops_(&ops) {
    SparseMatrix S = detail::build_saddle(ops.M, ops.B, dof.pressure_areas, 1.0);
    lu_.compute(S);
    if (lu_.info() != Eigen::Success)
      throw std::runtime_error("DivFreeProjector: saddle factorization failed (inf-sup failure?)");
  }

  /// Project from a load vector f_i = int v . phi_i dx.
  Vector project_load(const Vector& load) const {
    const int nu = dof_->n_free, np = dof_->n_pressure;
    Vector rhs = Vector::Zero(nu + np + 1);
    rhs.head(nu) = load;
    Vector x = lu_.solve(rhs);
    return x.head(nu);
  }

  /// Project a smooth field sampled at quadrature points.
  Vector project(const VectorField& v, int quad_degree = 5) const {
    return project_load(velocity_load(*mesh_, *dof_, v, quad_degree));
  }

  /// Project an existing FE coefficient vector (free dofs).
  Vector project_coeffs(const Vector& coeffs) const {
    return project_load(ops_->M * coeffs);
  }

 private:
  const Mesh* mesh_;
  const DofMap* dof_;
  const AssembledOperators* ops_;
  Eigen::SparseLU<SparseMatrix> lu_;
};

/// Discrete inf-sup constant beta_h = sqrt(lambda_min) of
/// (B A^{-1} B^T) q = lambda M_p q on zero-mean pressures, by inverse
/// iteration on the Schur complement (each application is one sparse saddle
/// solve). Throws when the iteration does not settle within max_iter.
inline double infsup_constant(const Mesh& mesh, const DofMap& dof,
                              const AssembledOperators& ops, double tol = 1e-12,
                              int max_iter = 500) {
  const int nu = dof.n_free, np = dof.n_pressure;
  SparseMatrix S = detail::build_saddle(ops.A, ops.B, dof.pressure_areas, 1.0);
  Eigen::SparseLU<SparseMatrix> lu(S);
  if (lu.info() != Eigen::Success)
    throw std::runtime_error("infsup_constant: saddle factorization failed");

  const Vector& areas = dof.pressure_areas;
  double total_area = areas.sum();
  auto remove_mean = [&](Vector& q) { q.array() -= areas.dot(q) / total_area; };

  // T = S^{-1} M_p is self-adjoint in the M_p inner product; blocked inverse
  // subspace iteration with Rayleigh-Ritz finds its largest eigenvalue 1/beta^2
  // robustly even when the lowest Schur eigenvalues cluster.
  const int block = std::min(4, np - 1);
  if (block < 1) throw std::invalid_argument("infsup_constant: pressure space too small");
  auto mp_dot = [&](const Vector& a, const Vector& b) { return a.dot(areas.cwiseProduct(b)); };
  auto apply_T = [&](const Vector& q) {
    Vector rhs = Vector::Zero(nu + np + 1);
    rhs.segment(nu, np) = -areas.cwiseProduct(q);
    Vector z = lu.solve(rhs).segment(nu, np);
    remove_mean(z);
    return z;
  };

  Eigen::MatrixXd Q(np, block);
  auto eng = make_engine(0x1f5u);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int j = 0; j < block; ++j)
    for (int i = 0; i < np; ++i) Q(i, j) = gauss(eng);
  auto orthonormalize = [&](Eigen::MatrixXd& V) {
    for (int j = 0; j < V.cols(); ++j) {
      Vector v = V.col(j);
      remove_mean(v);
      for (int k = 0; k < j; ++k) v -= mp_dot(V.col(k), v) * V.col(k);
      double n = std::sqrt(mp_dot(v, v));
      if (n <= 0.0) throw std::runtime_error("infsup_constant: degenerate subspace");
      V.col(j) = v / n;
    }
  };
  orthonormalize(Q);

  for (int it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd Y(np, block);
    for (int j = 0; j < block; ++j) Y.col(j) = apply_T(Q.col(j));
    Eigen::MatrixXd B(block, block);
    for (int i = 0; i < block; ++i)
      for (int j = 0; j < block; ++j) B(i, j) = mp_dot(Q.col(i), Y.col(j));
    B = 0.5 * (B + B.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(B);
    int top = block - 1;  // largest Ritz value of T = smallest Schur eigenvalue
    double mu = eig.eigenvalues()[top];
    Vector ritz = Q * eig.eigenvectors().col(top);
    Vector t_ritz = Y * eig.eigenvectors().col(top);
    Vector r = t_ritz - mu * ritz;
    if (mu > 0.0 && std::sqrt(mp_dot(r, r)) <= std::sqrt(tol) * mu)
      return std::sqrt(1.0 / mu);
    Q = Y;
    orthonormalize(Q);
  }
  throw std::runtime_error("infsup_constant: inverse iteration did not converge");
}

}  // namespace snse

/// @file stepper.hpp
/// @brief Semi-implicit Euler iteration for the stochastic Navier-Stokes
///        scheme: one sparse saddle solve per step, explicit noise, implicit
///        viscosity, transport linearized at the previous iterate. Includes
///        the R-truncated variant driven by a discrete stopping schedule.
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "snse/fem.hpp"
#include "snse/linsolve.hpp"
#include "snse/noise.hpp"

namespace snse {

struct SchemeConfig {
  double mu = 1.0;      // viscosity
  double T = 0.5;       // end time
  int steps = 64;       // M; tau = T / M
  double theta = 0.5;   // divergence stabilization weight in [0,1]
  double solver_tolerance = 1e-10;
  VectorField forcing;  // optional deterministic body force (verification only)

  double tau() const { return T / steps; }

  void validate() const {
    if (mu <= 0.0) throw std::invalid_argument("SchemeConfig: mu must be positive");
    if (T <= 0.0) throw std::invalid_argument("SchemeConfig: T must be positive");
    if (steps < 1) throw std::invalid_argument("SchemeConfig: steps must be >= 1");
    if (theta < 0.0 || theta > 1.0)
      throw std::invalid_argument("SchemeConfig: theta must lie in [0,1]");
  }
};

struct StepDiagnostics {
  double energy = 0.0;           // |u_m|_{L2}
  double gradnorm = 0.0;         // |grad u_m|_{L2}
  double div_residual = 0.0;     // |B u_m|
  double energy_residual = 0.0;  // relative defect of the per-step energy identity
};

struct Trajectory {
  int steps = 0;
  double tau = 0.0;
  int stride = 1;  // velocity/pressure snapshots kept at multiples of stride
  std::vector<Vector> velocity;  // snapshots, free dofs
  std::vector<Vector> pressure;  // snapshots; entry 0 is a zero vector
  std::vector<StepDiagnostics> diagnostics;  // length steps + 1

  const Vector& velocity_at(int m) const {
    if (m % stride != 0) throw std::invalid_argument("Trajectory: no snapshot at this step");
    return velocity[m / stride];
  }
  const Vector& pressure_at(int m) const {
    if (m % stride != 0) throw std::invalid_argument("Trajectory: no snapshot at this step");
    return pressure[m / stride];
  }
};

/// Grid-valued stopping schedule derived from a reference gradient-norm
/// sequence: steps stay active up to the first grid index whose gradient norm
/// reaches R, and are frozen afterwards.
struct StoppingSchedule {
  double R = 0.0;
  int last_active = 0;               // n*: largest active step index
  std::vector<double> gradnorms;     // length M+1
  std::vector<int> active;           // length M+1; active[m] for step m>=1
  std::vector<double> stop_times;    // t_m^R = tau * min(m, n*)

  bool stopped() const { return last_active < static_cast<int>(active.size()) - 1; }
};

inline StoppingSchedule discrete_stopping(const std::vector<double>& gradnorms, double R,
                                          double tau) {
  if (R <= 0.0) throw std::invalid_argument("discrete_stopping: R must be positive");
  const int M = static_cast<int>(gradnorms.size()) - 1;
  if (M < 0) throw std::invalid_argument("discrete_stopping: empty gradient sequence");
  StoppingSchedule s;
  s.R = R;
  s.gradnorms = gradnorms;
  int nstar = M;
  for (int n = 0; n <= M; ++n)
    if (gradnorms[n] >= R) { nstar = n == 0 ? 0 : n; break; }
  // the grid time at which the norm first reaches R is still attained
  s.last_active = nstar;
  s.active.assign(M + 1, 0);
  s.stop_times.assign(M + 1, 0.0);
  for (int m = 1; m <= M; ++m) {
    s.active[m] = m <= nstar ? 1 : 0;
    s.stop_times[m] = tau * std::min(m, nstar);
  }
  return s;
}

/// Driver for one mesh level. Not thread-safe; use one instance per worker.
class Stepper {
 public:
  Stepper(const Mesh& mesh, const DofMap& dof, const AssembledOperators& ops,
          const NoiseModel& noise, const NoiseAssembly& noise_assembly,
          SchemeConfig config)
      : mesh_(&mesh), dof_(&dof), ops_(&ops), noise_(&noise), nass_(&noise_assembly),
        cfg_(std::move(config)),
        solver_(mesh, dof, ops, cfg_.T / cfg_.steps, cfg_.mu, cfg_.solver_tolerance) {
    cfg_.validate();
    if (cfg_.forcing)
      forcing_load_ = velocity_load(mesh, dof, cfg_.forcing);
    else
      forcing_load_ = Vector::Zero(dof.n_free);
  }

  const SchemeConfig& config() const { return cfg_; }

  /// One scheme step from `u_prev` with noise load `noise_load`.
  SaddleSolution step(const Vector& u_prev, const Vector& noise_load) {
    double tau = solver_.tau();
    Vector rhs = ops_->M * u_prev + noise_load + tau * forcing_load_;
    return solver_.solve(u_prev, cfg_.theta, rhs);
  }

  /// Run the plain scheme over a path with exactly cfg.steps increments.
  /// `stride` controls which velocity/pressure snapshots are retained
  /// (diagnostics are always full).
  Trajectory run_path(const WienerPath& path, const Vector& u0, int stride = 1) {
    StoppingSchedule all_active;
    all_active.R = 0;
    all_active.active.assign(cfg_.steps + 1, 1);
    all_active.last_active = cfg_.steps;
    return run_impl(path, u0, all_active, stride);
  }

  /// Run the truncated scheme: steps with tau_m^R = 0 freeze the state and
  /// carry no noise; active steps coincide bitwise with the plain scheme.
  Trajectory run_truncated(const WienerPath& path, const Vector& u0,
                           const StoppingSchedule& schedule, int stride = 1) {
    if (static_cast<int>(schedule.active.size()) != cfg_.steps + 1)
      throw std::invalid_argument("run_truncated: schedule length mismatch");
    return run_impl(path, u0, schedule, stride);
  }

  /// Diagnostics stream: m, t, energy, gradnorm, div_residual,
  /// energy_identity_residual.
  static void write_diagnostics_csv(const Trajectory& traj, std::ostream& out) {
    out << "m,t,energy,gradnorm,div_residual,energy_identity_residual\n";
    char buf[256];
    for (std::size_t m = 0; m < traj.diagnostics.size(); ++m) {
      const auto& d = traj.diagnostics[m];
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", m,
                    m * traj.tau, d.energy, d.gradnorm, d.div_residual, d.energy_residual);
      out << buf;
    }
  }

 private:
  Trajectory run_impl(const WienerPath& path, const Vector& u0,
                      const StoppingSchedule& schedule, int stride) {
    if (path.steps != cfg_.steps)
      throw std::invalid_argument("Stepper: path has wrong number of increments");
    if (path.modes != noise_->J)
      throw std::invalid_argument("Stepper: path has wrong number of modes");
    if (u0.size() != dof_->n_free)
      throw std::invalid_argument("Stepper: u0 must be a free-dof vector");
    if (stride < 1 || cfg_.steps % stride != 0)
      throw std::invalid_argument("Stepper: stride must divide the step count");

    const double tau = solver_.tau();
    Trajectory traj;
    traj.steps = cfg_.steps;
    traj.tau = tau;
    traj.stride = stride;
    traj.diagnostics.resize(cfg_.steps + 1);

    Vector u = u0;
    Vector p = Vector::Zero(dof_->n_pressure);
    traj.velocity.push_back(u);
    traj.pressure.push_back(p);
    traj.diagnostics[0] = diagnostics_of(u, Vector::Zero(dof_->n_free), u, 0.0);

    for (int m = 1; m <= cfg_.steps; ++m) {
      if (schedule.active[m]) {
        Vector noise_load = nass_->load(*noise_, u, path.increments.row(m - 1));
        Vector u_prev = u;
        SaddleSolution sol = step(u_prev, noise_load);
        u = sol.u;
        p = sol.p;
        traj.diagnostics[m] =
            diagnostics_of(u, noise_load + tau * forcing_load_, u_prev, tau);
      } else {
        // frozen: u_m = u_{m-1} exactly, zero noise contribution
        traj.diagnostics[m] = traj.diagnostics[m - 1];
        traj.diagnostics[m].energy_residual = 0.0;
      }
      if (m % stride == 0) {
        traj.velocity.push_back(u);
        traj.pressure.push_back(p);
      }
    }
    return traj;
  }

  StepDiagnostics diagnostics_of(const Vector& u, const Vector& load, const Vector& u_prev,
                                 double tau) const {
    StepDiagnostics d;
    double e2 = u.dot(ops_->M * u);
    double g2 = u.dot(ops_->A * u);
    d.energy = std::sqrt(std::max(e2, 0.0));
    d.gradnorm = std::sqrt(std::max(g2, 0.0));
    d.div_residual = (ops_->B * u).norm();
    if (tau > 0.0) {
      Vector du = u - u_prev;
      double e2_prev = u_prev.dot(ops_->M * u_prev);
      double conv = trilinear_term(u_prev, u);
      double lhs = 0.5 * (e2 - e2_prev) + 0.5 * du.dot(ops_->M * du) + tau * cfg_.mu * g2 +
                   tau * conv;
      double rhs = load.dot(u);
      double scale = 0.5 * (e2 + e2_prev) + 0.5 * du.dot(ops_->M * du) + tau * cfg_.mu * g2 +
                     std::abs(tau * conv) + std::abs(rhs);
      d.energy_residual = std::abs(lhs - rhs) / std::max(scale, 1e-30);
    }
    return d;
  }

  /// v^T N_theta(w) v evaluated directly at quadrature points.
  double trilinear_term(const Vector& w_free, const Vector& v_free) const {
    const auto& conv = ops_->conv;
    const int nq = static_cast<int>(conv.rule.points.size());
    double total = 0.0;
    for (int t = 0; t < mesh_->n_triangles(); ++t) {
      Eigen::Matrix<double, 6, 2> wloc, vloc;
      const auto& nodes = dof_->cell_nodes[t];
      for (int a = 0; a < 6; ++a)
        for (int c = 0; c < 2; ++c) {
          int fi = dof_->free_index[dof_->node_dof(nodes[a], c)];
          wloc(a, c) = fi >= 0 ? w_free[fi] : 0.0;
          vloc(a, c) = fi >= 0 ? v_free[fi] : 0.0;
        }
      for (int q = 0; q < nq; ++q) {
        const auto& pg = conv.grads[static_cast<std::size_t>(t) * nq + q];
        double wq = conv.scaled_weights[static_cast<std::size_t>(t) * nq + q];
        Eigen::Vector2d wval = wloc.transpose() * conv.shapes.col(q);
        Eigen::Vector2d vval = vloc.transpose() * conv.shapes.col(q);
        Eigen::Matrix2d vgrad = vloc.transpose() * pg;  // rows comp, cols d/dx d/dy
        double divw = wloc.col(0).dot(pg.col(0)) + wloc.col(1).dot(pg.col(1));
        total += wq * ((vgrad * wval).dot(vval) + cfg_.theta * divw * vval.dot(vval));
      }
    }
    return total;
  }

  const Mesh* mesh_;
  const DofMap* dof_;
  const AssembledOperators* ops_;
  const NoiseModel* noise_;
  const NoiseAssembly* nass_;
  SchemeConfig cfg_;
  StepSolver solver_;
  Vector forcing_load_;
};

}  // namespace snse

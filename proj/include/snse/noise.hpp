/// @file noise.hpp
/// @brief Constructive diffusion operator and Wiener path sampling.
///
/// The diffusion operator acts mode-wise: Phi(u) e_k = gamma_k g_k(u) b_k,
/// where b_k = curl psi_k with stream functions psi_k = sin^2(k1 pi x)
/// sin^2(k2 pi y). Each b_k is pointwise solenoidal and vanishes on the
/// boundary together with its trace. Gains decay as (k1^2+k2^2)^{-s}. In the
/// multiplicative variant g_k(u) = sin(<u, w_k>_{L2}) with probe fields
/// w_k = b_k, which keeps Phi globally Lipschitz with Hilbert-Schmidt constant
/// L = (sum_k gamma_k^2 |b_k|^2 |w_k|^2)^{1/2}.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <vector>

#include "snse/fem.hpp"
#include "snse/rng.hpp"

namespace snse {

enum class NoiseType { additive, multiplicative };

struct NoiseModel {
  int J = 16;
  double decay = 2.0;  // gain exponent s
  double scale = 1.0;  // overall amplitude
  NoiseType type = NoiseType::multiplicative;
  std::vector<Eigen::Vector2i> modes;  // wave numbers (k1, k2)
  std::vector<double> gains;           // gamma_k = scale * (k1^2+k2^2)^{-s}

  static NoiseModel create(int J, double decay = 2.0,
                           NoiseType type = NoiseType::multiplicative,
                           double scale = 1.0) {
    if (J < 1) throw std::invalid_argument("NoiseModel: J must be >= 1");
    NoiseModel m;
    m.J = J;
    m.decay = decay;
    m.scale = scale;
    m.type = type;
    std::vector<Eigen::Vector2i> all;
    int bound = 1;
    while (bound * bound < J + 1) ++bound;
    bound += 2;
    for (int k1 = 1; k1 <= bound; ++k1)
      for (int k2 = 1; k2 <= bound; ++k2) all.emplace_back(k1, k2);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      int na = a.squaredNorm(), nb = b.squaredNorm();
      if (na != nb) return na < nb;
      if (a.x() != b.x()) return a.x() < b.x();
      return a.y() < b.y();
    });
    if (static_cast<int>(all.size()) < J)
      throw std::invalid_argument("NoiseModel: J too large");
    m.modes.assign(all.begin(), all.begin() + J);
    m.gains.resize(J);
    for (int k = 0; k < J; ++k)
      m.gains[k] = scale * std::pow(static_cast<double>(m.modes[k].squaredNorm()), -decay);
    return m;
  }

  // sin^2 factor and derivatives up to third order
  static double f0(double a, double x) { double s = std::sin(a * x); return s * s; }
  static double f1(double a, double x) { return a * std::sin(2 * a * x); }
  static double f2(double a, double x) { return 2 * a * a * std::cos(2 * a * x); }
  static double f3(double a, double x) { return -4 * a * a * a * std::sin(2 * a * x); }

  /// b_k(x) = (d/dy psi_k, -d/dx psi_k)
  Eigen::Vector2d mode_field(int k, const Eigen::Vector2d& x) const {
    double a1 = modes[k].x() * M_PI, a2 = modes[k].y() * M_PI;
    return {f0(a1, x.x()) * f1(a2, x.y()), -f1(a1, x.x()) * f0(a2, x.y())};
  }

  /// Gradient of b_k, rows = components, cols = d/dx, d/dy.
  Eigen::Matrix2d mode_gradient(int k, const Eigen::Vector2d& x) const {
    double a1 = modes[k].x() * M_PI, a2 = modes[k].y() * M_PI;
    Eigen::Matrix2d g;
    g(0, 0) = f1(a1, x.x()) * f1(a2, x.y());
    g(0, 1) = f0(a1, x.x()) * f2(a2, x.y());
    g(1, 0) = -f2(a1, x.x()) * f0(a2, x.y());
    g(1, 1) = -f1(a1, x.x()) * f1(a2, x.y());
    return g;
  }

  /// Pointwise |D^2 b_k|^2 (all six second partials), for W^{2,2} summability
  /// checks of the mode family.
  double mode_hessian_norm2(int k, const Eigen::Vector2d& x) const {
    double a1 = modes[k].x() * M_PI, a2 = modes[k].y() * M_PI;
    double b1xx = f2(a1, x.x()) * f1(a2, x.y());
    double b1xy = f1(a1, x.x()) * f2(a2, x.y());
    double b1yy = f0(a1, x.x()) * f3(a2, x.y());
    double b2xx = -f3(a1, x.x()) * f0(a2, x.y());
    double b2xy = -f2(a1, x.x()) * f1(a2, x.y());
    double b2yy = -f1(a1, x.x()) * f2(a2, x.y());
    return b1xx * b1xx + 2 * b1xy * b1xy + b1yy * b1yy + b2xx * b2xx + 2 * b2xy * b2xy +
           b2yy * b2yy;
  }
};

/// Per-mesh data for the diffusion operator: mode load vectors
/// r_k,i = int b_k . phi_i dx and quadrature norms of the modes.
class NoiseAssembly {
 public:
  NoiseAssembly() = default;

  NoiseAssembly(const NoiseModel& model, const Mesh& mesh, const DofMap& dof,
                int quad_degree = 5) {
    mode_loads_.resize(dof.n_free, model.J);
    b_norm2_.resize(model.J);
    for (int k = 0; k < model.J; ++k) {
      mode_loads_.col(k) = velocity_load(
          mesh, dof, [&](const Eigen::Vector2d& x) { return model.mode_field(k, x); },
          quad_degree);
      // |b_k|_{L2}^2 under the same quadrature
      QuadratureRule rule = triangle_rule(quad_degree);
      double n2 = 0.0;
      for (int t = 0; t < mesh.n_triangles(); ++t) {
        auto geo = detail::element_geometry(mesh, t);
        Eigen::Vector2d a = mesh.vertices[mesh.triangles[t][0]];
        for (std::size_t q = 0; q < rule.points.size(); ++q) {
          Eigen::Vector2d bx = model.mode_field(k, a + geo.jacobian * rule.points[q]);
          n2 += geo.area * rule.weights[q] * bx.squaredNorm();
        }
      }
      b_norm2_[k] = n2;
    }
  }

  int n_modes() const { return static_cast<int>(b_norm2_.size()); }
  const Eigen::MatrixXd& mode_loads() const { return mode_loads_; }
  double mode_norm2(int k) const { return b_norm2_[k]; }

  /// Scalar modulation g_k(u); probes are the mode fields themselves, so
  /// <u, w_k> equals u . r_k.
  double g_value(const NoiseModel& model, int k, const Vector& u_free) const {
    if (model.type == NoiseType::additive) return 1.0;
    return std::sin(u_free.dot(mode_loads_.col(k)));
  }

  /// Velocity load of Phi(u) dW: sum_k gamma_k g_k(u) dW_k r_k.
  Vector load(const NoiseModel& model, const Vector& u_free,
              const Eigen::Ref<const Eigen::VectorXd>& increments) const {
    if (increments.size() != n_modes())
      throw std::invalid_argument("NoiseAssembly::load: increment row has wrong mode count");
    Vector out = Vector::Zero(mode_loads_.rows());
    for (int k = 0; k < n_modes(); ++k) {
      double c = model.gains[k] * g_value(model, k, u_free) * increments[k];
      if (c != 0.0) out += c * mode_loads_.col(k);
    }
    return out;
  }

  /// Analytic Hilbert-Schmidt Lipschitz constant of the model (0 for additive
  /// noise). Norms are taken under the assembly quadrature so the bound is
  /// rigorous for the discrete inner products used in g_k.
  double lipschitz_constant(const NoiseModel& model) const {
    if (model.type == NoiseType::additive) return 0.0;
    double s = 0.0;
    for (int k = 0; k < n_modes(); ++k)
      s += model.gains[k] * model.gains[k] * b_norm2_[k] * b_norm2_[k];
    return std::sqrt(s);  // |w_k| = |b_k|
  }

  /// |Phi(u) - Phi(v)|_{HS, L2}.
  double hs_distance(const NoiseModel& model, const Vector& u, const Vector& v) const {
    double s = 0.0;
    for (int k = 0; k < n_modes(); ++k) {
      double d = model.gains[k] * (g_value(model, k, u) - g_value(model, k, v));
      s += d * d * b_norm2_[k];
    }
    return std::sqrt(s);
  }

 private:
  Eigen::MatrixXd mode_loads_;  // n_free x J
  std::vector<double> b_norm2_;
};

/// Empirical Lipschitz ratio max |Phi(u)-Phi(v)|_HS / |u-v|_{L2} over random
/// FE field pairs; coincident pairs are skipped.
inline double lipschitz_check(const NoiseModel& model, const NoiseAssembly& assembly,
                              const AssembledOperators& ops, int trials,
                              std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("lipschitz_check: trials must be >= 1");
  auto eng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = static_cast<int>(ops.M.rows());
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Vector u(n), v(n);
    for (int i = 0; i < n; ++i) u[i] = gauss(eng);
    for (int i = 0; i < n; ++i) v[i] = gauss(eng);
    Vector d = u - v;
    double dn = std::sqrt(d.dot(ops.M * d));
    if (dn == 0.0) continue;
    worst = std::max(worst, assembly.hs_distance(model, u, v) / dn);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Wiener paths
// ---------------------------------------------------------------------------

/// Per-mode Gaussian increments at a fixed time grid. Coarser grids are
/// always derived by exact block summation, never by resampling, so all
/// levels of an experiment share one driving path.
struct WienerPath {
  std::uint64_t seed = 0;
  int steps = 0;       // number of increments
  int modes = 0;       // J
  double tau = 0.0;    // grid spacing; increments ~ N(0, tau)
  Eigen::MatrixXd increments;  // steps x modes
};

inline WienerPath sample_path(std::uint64_t seed, int steps, int modes, double tau) {
  if (steps < 1 || modes < 1)
    throw std::invalid_argument("sample_path: need steps >= 1 and modes >= 1");
  WienerPath p;
  p.seed = seed;
  p.steps = steps;
  p.modes = modes;
  p.tau = tau;
  p.increments.resize(steps, modes);
  auto eng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(tau));
  for (int m = 0; m < steps; ++m)
    for (int k = 0; k < modes; ++k) p.increments(m, k) = gauss(eng);
  return p;
}

/// Exact coarsening: coarse increment m is the sum of fine increments in
/// ((m-1)f, mf].
inline WienerPath coarsen(const WienerPath& fine, int factor) {
  if (factor < 1 || fine.steps % factor != 0)
    throw std::invalid_argument("coarsen: factor must divide the step count");
  if (factor == 1) return fine;
  WienerPath c;
  c.seed = fine.seed;
  c.steps = fine.steps / factor;
  c.modes = fine.modes;
  c.tau = fine.tau * factor;
  c.increments.setZero(c.steps, c.modes);
  for (int m = 0; m < c.steps; ++m)
    for (int j = 0; j < factor; ++j) c.increments.row(m) += fine.increments.row(m * factor + j);
  return c;
}

/// Binary little-endian dump: header (seed, steps, modes as u64, tau as f64),
/// then row-major f64 increments.
inline void save_path(const WienerPath& p, std::ostream& out) {
  auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  put_u64(p.seed);
  put_u64(static_cast<std::uint64_t>(p.steps));
  put_u64(static_cast<std::uint64_t>(p.modes));
  out.write(reinterpret_cast<const char*>(&p.tau), 8);
  for (int m = 0; m < p.steps; ++m)
    for (int k = 0; k < p.modes; ++k) {
      double v = p.increments(m, k);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
}

inline WienerPath load_path(std::istream& in) {
  WienerPath p;
  std::uint64_t steps = 0, modes = 0;
  auto get_u64 = [&](std::uint64_t& v) { in.read(reinterpret_cast<char*>(&v), 8); };
  get_u64(p.seed);
  get_u64(steps);
  get_u64(modes);
  in.read(reinterpret_cast<char*>(&p.tau), 8);
  if (!in) throw std::runtime_error("load_path: truncated header");
  p.steps = static_cast<int>(steps);
  p.modes = static_cast<int>(modes);
  p.increments.resize(p.steps, p.modes);
  for (int m = 0; m < p.steps; ++m)
    for (int k = 0; k < p.modes; ++k) {
      double v;
      in.read(reinterpret_cast<char*>(&v), 8);
      if (!in) throw std::runtime_error("load_path: truncated payload");
      p.increments(m, k) = v;
    }
  return p;
}

inline void save_path(const WienerPath& p, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_path: cannot open " + path);
  save_path(p, f);
}

inline WienerPath load_path(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_path: cannot open " + path);
  return load_path(f);
}

}  // namespace snse

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <snse/linsolve.hpp>
#include <snse/rng.hpp>

using namespace snse;

namespace {

struct Setup {
  Mesh mesh;
  DofMap dof;
  AssembledOperators ops;
  explicit Setup(int n)
      : mesh(build_unit_square_mesh(n)), dof(build_dofmap(mesh)),
        ops(assemble_static(mesh, dof)) {}
};

Vector random_vector(int n, std::uint64_t seed) {
  auto eng = make_engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(eng);
  return v;
}

}  // namespace

TEST_CASE("step solver matches a dense LU oracle, with and without transport") {
  Setup s(2);
  const double tau = 0.01, mu = 1.0;
  StepSolver solver(s.mesh, s.dof, s.ops, tau, mu);
  const int nu = s.dof.n_free, np = s.dof.n_pressure;
  Vector f = random_vector(nu, 11);

  SECTION("pure Stokes step") {
    SaddleSolution sol = solver.solve(Vector(), 0.5, f);
    SparseMatrix K = s.ops.M + tau * mu * s.ops.A;
    Eigen::MatrixXd S = Eigen::MatrixXd(detail::build_saddle(K, s.ops.B, s.dof.pressure_areas, -tau));
    Vector rhs = Vector::Zero(nu + np + 1);
    rhs.head(nu) = f;
    Vector x = Eigen::FullPivLU<Eigen::MatrixXd>(S).solve(rhs);
    CHECK((sol.u - x.head(nu)).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((sol.p - x.segment(nu, np)).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK(std::abs(sol.lambda) < 1e-9);
  }

  SECTION("step with transport linearization") {
    Vector w = random_vector(nu, 12);
    SaddleSolution sol = solver.solve(w, 0.5, f);
    SparseMatrix K = s.ops.M + tau * mu * s.ops.A;
    SparseMatrix N = assemble_convection(s.mesh, s.dof, s.ops, w, 0.5);
    Eigen::MatrixXd S = Eigen::MatrixXd(detail::build_saddle(K, s.ops.B, s.dof.pressure_areas, -tau));
    S.topLeftCorner(nu, nu) += tau * Eigen::MatrixXd(N);
    Vector rhs = Vector::Zero(nu + np + 1);
    rhs.head(nu) = f;
    Vector x = Eigen::FullPivLU<Eigen::MatrixXd>(S).solve(rhs);
    CHECK((sol.u - x.head(nu)).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((sol.p - x.segment(nu, np)).lpNorm<Eigen::Infinity>() < 1e-8);
    // divergence-free and zero-mean pressure by construction
    CHECK((s.ops.B * sol.u).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK(std::abs(s.dof.pressure_areas.dot(sol.p)) < 1e-10);
  }
}

TEST_CASE("step solver residual contract holds on a finer level") {
  Setup s(8);
  StepSolver solver(s.mesh, s.dof, s.ops, 0.005, 1.0);
  Vector w = 0.3 * random_vector(s.dof.n_free, 21);
  Vector f = random_vector(s.dof.n_free, 22);
  SaddleSolution sol = solver.solve(w, 0.5, f);
  SparseMatrix K = s.ops.M + 0.005 * s.ops.A;
  SparseMatrix N = assemble_convection(s.mesh, s.dof, s.ops, w, 0.5);
  Vector ru = K * sol.u + 0.005 * (N * sol.u) -
              0.005 * (SparseMatrix(s.ops.B.transpose()) * sol.p) - f;
  CHECK(ru.norm() <= 1e-10 * f.norm());
  CHECK((s.ops.B * sol.u).norm() <= 1e-10 * f.norm());
}

TEST_CASE("rejects invalid construction parameters") {
  Setup s(2);
  CHECK_THROWS_AS(StepSolver(s.mesh, s.dof, s.ops, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(StepSolver(s.mesh, s.dof, s.ops, 0.01, -1.0), std::invalid_argument);
}

TEST_CASE("divergence-free projection is idempotent and orthogonal") {
  Setup s(4);
  DivFreeProjector proj(s.mesh, s.dof, s.ops);
  Vector u = random_vector(s.dof.n_free, 31);
  Vector pu = proj.project_coeffs(u);
  CHECK((s.ops.B * pu).lpNorm<Eigen::Infinity>() < 1e-10);
  Vector ppu = proj.project_coeffs(pu);
  CHECK((ppu - pu).lpNorm<Eigen::Infinity>() < 1e-9);
  // L2-orthogonality of the residual to the projected field
  double ip = (u - pu).dot(s.ops.M * pu);
  CHECK(std::abs(ip) < 1e-10 * u.dot(s.ops.M * u));
}

TEST_CASE("projection of an analytically divergence-free field keeps its interpolant close") {
  Setup s(8);
  DivFreeProjector proj(s.mesh, s.dof, s.ops);
  VectorField f = [](const Eigen::Vector2d& x) {
    double a = M_PI;
    double sx = std::sin(a * x.x()), sy = std::sin(a * x.y());
    return Eigen::Vector2d{sx * sx * a * std::sin(2 * a * x.y()),
                           -a * std::sin(2 * a * x.x()) * sy * sy};
  };
  Vector pf = proj.project(f);
  Vector interp = to_free(s.dof, interpolate_p2(s.mesh, s.dof, f));
  Vector d = pf - interp;
  double rel = std::sqrt(d.dot(s.ops.M * d) / interp.dot(s.ops.M * interp));
  CHECK(rel < 0.05);  // both approximate the same smooth field
  CHECK((s.ops.B * pf).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("inf-sup constant matches the dense generalized eigensolver oracle") {
  Setup s(2);
  double beta = infsup_constant(s.mesh, s.dof, s.ops);

  // Dense oracle: smallest nonzero eigenvalue of B A^{-1} B^T q = lambda M_p q.
  Eigen::MatrixXd A = Eigen::MatrixXd(s.ops.A);
  Eigen::MatrixXd B = Eigen::MatrixXd(s.ops.B);
  Eigen::MatrixXd Mp = s.dof.pressure_areas.asDiagonal();
  Eigen::MatrixXd Schur = B * A.ldlt().solve(B.transpose());
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> eig(Schur, Mp);
  REQUIRE(eig.info() == Eigen::Success);
  // the constant-pressure direction carries eigenvalue zero
  double lambda_min = -1;
  for (int i = 0; i < eig.eigenvalues().size(); ++i)
    if (eig.eigenvalues()[i] > 1e-10) { lambda_min = eig.eigenvalues()[i]; break; }
  REQUIRE(lambda_min > 0);
  CHECK(beta == Catch::Approx(std::sqrt(lambda_min)).margin(1e-8));
}

TEST_CASE("inf-sup constant is stable under refinement") {
  Setup s4(4);
  double b4 = infsup_constant(s4.mesh, s4.dof, s4.ops);
  Setup s8(8);
  double b8 = infsup_constant(s8.mesh, s8.dof, s8.ops);
  CHECK(b4 > 0.05);
  CHECK(b8 > 0.05);
  CHECK(std::abs(b8 - b4) / b4 < 0.2);
}

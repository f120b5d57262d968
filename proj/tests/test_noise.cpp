#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include <snse/noise.hpp>
#include <snse/rng.hpp>

using namespace snse;

TEST_CASE("mode family is ordered by wave number magnitude with power-law gains") {
  NoiseModel m = NoiseModel::create(8, 2.0, NoiseType::multiplicative, 0.5);
  REQUIRE(m.modes.size() == 8);
  for (std::size_t k = 1; k < m.modes.size(); ++k)
    CHECK(m.modes[k - 1].squaredNorm() <= m.modes[k].squaredNorm());
  CHECK(m.modes[0] == Eigen::Vector2i(1, 1));
  for (int k = 0; k < 8; ++k)
    CHECK(m.gains[k] ==
          Catch::Approx(0.5 * std::pow(m.modes[k].squaredNorm(), -2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(NoiseModel::create(0), std::invalid_argument);
}

TEST_CASE("mode fields are divergence-free with zero boundary trace") {
  NoiseModel m = NoiseModel::create(6);
  auto eng = make_engine(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int k = 0; k < m.J; ++k) {
    for (int i = 0; i < 200; ++i) {
      Eigen::Vector2d x{U(eng), U(eng)};
      Eigen::Matrix2d g = m.mode_gradient(k, x);
      CHECK(std::abs(g(0, 0) + g(1, 1)) < 1e-12);
      // finite-difference cross check of the analytic gradient
      double h = 1e-6;
      Eigen::Vector2d dx = (m.mode_field(k, x + Eigen::Vector2d{h, 0}) -
                            m.mode_field(k, x - Eigen::Vector2d{h, 0})) /
                           (2 * h);
      CHECK((dx - g.col(0)).norm() < 1e-5 * (1.0 + g.norm()));
    }
    for (int i = 0; i < 50; ++i) {
      double s = U(eng);
      CHECK(m.mode_field(k, {0.0, s}).norm() < 1e-12);
      CHECK(m.mode_field(k, {1.0, s}).norm() < 1e-12);
      CHECK(m.mode_field(k, {s, 0.0}).norm() < 1e-12);
      CHECK(m.mode_field(k, {s, 1.0}).norm() < 1e-12);
    }
  }
}

TEST_CASE("mode hessian magnitudes are summable against the gains") {
  NoiseModel m = NoiseModel::create(16, 2.0);
  // gamma_k^2 |D^2 b_k|^2 must decay: the W^{2,2} norm of the family is finite
  double prev = 1e300;
  (void)prev;
  double total = 0;
  for (int k = 0; k < m.J; ++k) {
    double h2 = m.mode_hessian_norm2(k, {0.3, 0.7});
    total += m.gains[k] * m.gains[k] * h2;
    CHECK(std::isfinite(h2));
  }
  CHECK(std::isfinite(total));
}

TEST_CASE("empirical Lipschitz ratio stays below the analytic constant") {
  Mesh mesh = build_unit_square_mesh(4);
  DofMap dof = build_dofmap(mesh);
  AssembledOperators ops = assemble_static(mesh, dof);
  NoiseModel model = NoiseModel::create(8);
  NoiseAssembly nass(model, mesh, dof);
  double L = nass.lipschitz_constant(model);
  CHECK(L > 0);
  double worst = lipschitz_check(model, nass, ops, 300, 99);
  CHECK(worst <= L * (1 + 1e-12));
}

TEST_CASE("additive noise has unit modulation and zero Lipschitz constant") {
  Mesh mesh = build_unit_square_mesh(3);
  DofMap dof = build_dofmap(mesh);
  NoiseModel model = NoiseModel::create(4, 2.0, NoiseType::additive);
  NoiseAssembly nass(model, mesh, dof);
  Vector u = Vector::Random(dof.n_free);
  for (int k = 0; k < model.J; ++k) CHECK(nass.g_value(model, k, u) == 1.0);
  CHECK(nass.lipschitz_constant(model) == 0.0);
  Eigen::VectorXd dW = Eigen::VectorXd::Ones(model.J);
  Vector l1 = nass.load(model, u, dW);
  Vector l2 = nass.load(model, Vector::Zero(dof.n_free), dW);
  CHECK((l1 - l2).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("hs distance is symmetric, zero on the diagonal, and Lipschitz-bounded") {
  Mesh mesh = build_unit_square_mesh(3);
  DofMap dof = build_dofmap(mesh);
  AssembledOperators ops = assemble_static(mesh, dof);
  NoiseModel model = NoiseModel::create(6);
  NoiseAssembly nass(model, mesh, dof);
  Vector u = Vector::Random(dof.n_free), v = Vector::Random(dof.n_free);
  CHECK(nass.hs_distance(model, u, u) == 0.0);
  CHECK(nass.hs_distance(model, u, v) == Catch::Approx(nass.hs_distance(model, v, u)));
  Vector d = u - v;
  double dn = std::sqrt(d.dot(ops.M * d));
  CHECK(nass.hs_distance(model, u, v) <= nass.lipschitz_constant(model) * dn * (1 + 1e-12));
}

TEST_CASE("wiener paths are seed-deterministic with the right marginal scale") {
  WienerPath a = sample_path(42, 256, 4, 0.01);
  WienerPath b = sample_path(42, 256, 4, 0.01);
  CHECK(a.increments == b.increments);
  WienerPath c = sample_path(43, 256, 4, 0.01);
  CHECK(a.increments != c.increments);
  double var = a.increments.array().square().mean();
  CHECK(var == Catch::Approx(0.01).epsilon(0.15));
}

TEST_CASE("coarsening sums blocks exactly and preserves per-mode displacement") {
  WienerPath fine = sample_path(7, 64, 3, 0.5 / 64);
  WienerPath coarse = coarsen(fine, 4);
  CHECK(coarse.steps == 16);
  CHECK(coarse.tau == Catch::Approx(4 * fine.tau));
  for (int m = 0; m < 16; ++m)
    for (int k = 0; k < 3; ++k) {
      double s = 0;
      for (int j = 0; j < 4; ++j) s += fine.increments(4 * m + j, k);
      CHECK(coarse.increments(m, k) == s);  // bitwise: same summation order
    }
  // checksum invariant: total displacement per mode is preserved
  for (int k = 0; k < 3; ++k)
    CHECK(coarse.increments.col(k).sum() ==
          Catch::Approx(fine.increments.col(k).sum()).margin(1e-13));
  CHECK_THROWS_AS(coarsen(fine, 3), std::invalid_argument);
  WienerPath same = coarsen(fine, 1);
  CHECK(same.increments == fine.increments);
}

TEST_CASE("binary path serialization round-trips bitwise") {
  WienerPath p = sample_path(1234, 32, 5, 0.25 / 32);
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  save_path(p, ss);
  WienerPath q = load_path(ss);
  CHECK(q.seed == p.seed);
  CHECK(q.steps == p.steps);
  CHECK(q.modes == p.modes);
  CHECK(q.tau == p.tau);
  CHECK(q.increments == p.increments);
  std::stringstream trunc(std::string("abc"), std::ios::in | std::ios::binary);
  CHECK_THROWS_AS(load_path(trunc), std::runtime_error);
}

TEST_CASE("seed derivation separates sample streams") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(5, 17) == derive_seed(5, 17));
}

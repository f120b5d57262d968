/// @file quadrature.hpp
/// @brief Symmetric Gauss rules on the reference triangle (0,0)-(1,0)-(0,1).
///
/// Weights are normalized to sum to one; a physical integral over a triangle K
/// is area(K) * sum_q w_q f(F_K(xi_q)).
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace snse {

struct QuadratureRule {
  std::vector<Eigen::Vector2d> points;  // reference coordinates (xi, eta)
  std::vector<double> weights;          // sum to 1
  int degree = 0;                       // exact for polynomials up to this degree
};

/// Smallest shipped rule exact for the requested polynomial degree.
inline QuadratureRule triangle_rule(int degree) {
  QuadratureRule r;
  if (degree <= 1) {
    r.degree = 1;
    r.points = {{1.0 / 3.0, 1.0 / 3.0}};
    r.weights = {1.0};
  } else if (degree <= 2) {
    r.degree = 2;
    r.points = {{1.0 / 6.0, 1.0 / 6.0}, {2.0 / 3.0, 1.0 / 6.0}, {1.0 / 6.0, 2.0 / 3.0}};
    r.weights = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  } else if (degree <= 4) {
    // Dunavant order 4, 6 points.
    r.degree = 4;
    const double a = 0.445948490915965;
    const double wa = 0.223381589678011;
    const double b = 0.091576213509771;
    const double wb = 0.109951743655322;
    r.points = {{a, a}, {1 - 2 * a, a}, {a, 1 - 2 * a},
                {b, b}, {1 - 2 * b, b}, {b, 1 - 2 * b}};
    r.weights = {wa, wa, wa, wb, wb, wb};
  } else if (degree <= 5) {
    // 7-point rule, exact to degree 5.
    r.degree = 5;
    const double s15 = std::sqrt(15.0);
    const double a = (6.0 + s15) / 21.0;
    const double wa = (155.0 + s15) / 1200.0;
    const double b = (6.0 - s15) / 21.0;
    const double wb = (155.0 - s15) / 1200.0;
    r.points = {{1.0 / 3.0, 1.0 / 3.0},
                {a, a}, {1 - 2 * a, a}, {a, 1 - 2 * a},
                {b, b}, {1 - 2 * b, b}, {b, 1 - 2 * b}};
    r.weights = {9.0 / 40.0, wa, wa, wa, wb, wb, wb};
  } else {
    throw std::invalid_argument("triangle_rule: no rule of degree > 5 shipped");
  }
  return r;
}

}  // namespace snse

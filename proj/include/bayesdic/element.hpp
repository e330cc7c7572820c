#pragma once

// Six-node quadratic triangle on the reference simplex {xi >= 0, eta >= 0,
// xi + eta <= 1}. Local node order: corners 0,1,2 then mid-edge nodes
// 3 (0-1), 4 (1-2), 5 (2-0).

#include "bayesdic/core.hpp"

#include <array>

namespace bayesdic::tri6 {

inline constexpr int kNodes = 6;
inline constexpr int kGaussPoints = 3;

struct GaussPoint {
  double xi;
  double eta;
  double weight;
};

//! Three-point rule, exact for quadratics; weights sum to the reference area 1/2.
inline constexpr std::array<GaussPoint, kGaussPoints> kGauss{{
    {1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0},
    {2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0},
    {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0},
}};

using Values = std::array<double, kNodes>;
using Gradients = std::array<Vec2, kNodes>;  // d/dxi, d/deta

inline Values shape(double xi, double eta) {
  const double z = 1.0 - xi - eta;
  return {z * (2.0 * z - 1.0), xi * (2.0 * xi - 1.0), eta * (2.0 * eta - 1.0),
          4.0 * z * xi,        4.0 * xi * eta,        4.0 * eta * z};
}

inline Gradients shape_gradients(double xi, double eta) {
  const double z = 1.0 - xi - eta;
  return {Vec2{-(4.0 * z - 1.0), -(4.0 * z - 1.0)},
          Vec2{4.0 * xi - 1.0, 0.0},
          Vec2{0.0, 4.0 * eta - 1.0},
          Vec2{4.0 * (z - xi), -4.0 * xi},
          Vec2{4.0 * eta, 4.0 * xi},
          Vec2{-4.0 * eta, 4.0 * (z - eta)}};
}

/// Reference-to-physical Jacobian dX/dxi (columns: d/dxi, d/deta).
inline Mat2 jacobian(const std::array<Vec2, kNodes>& X, const Gradients& dN) {
  Mat2 J = Mat2::Zero();
  for (int a = 0; a < kNodes; ++a) {
    J.col(0) += X[a] * dN[a].x();
    J.col(1) += X[a] * dN[a].y();
  }
  return J;
}

inline Vec2 map(const std::array<Vec2, kNodes>& X, double xi, double eta) {
  const Values N = shape(xi, eta);
  Vec2 p = Vec2::Zero();
  for (int a = 0; a < kNodes; ++a) p += N[a] * X[a];
  return p;
}

//! True when (xi, eta) is inside the reference triangle up to `tol`.
inline bool inside(double xi, double eta, double tol) {
  return xi >= -tol && eta >= -tol && xi + eta <= 1.0 + tol;
}

}  // namespace bayesdic::tri6

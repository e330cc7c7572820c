#pragma once

// Compressible Neo-Hookean law in plane strain (F33 = 1):
//   W = G/2 (I1bar - 3) + K/2 (ln J)^2,  I1bar = J^(-2/3) (|F|^2 + 1).
// In-plane tensors are flattened row-major: [F11, F12, F21, F22].

#include "bayesdic/core.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>

namespace bayesdic {

using Tangent = Eigen::Matrix4d;

inline constexpr std::array<const char*, 4> kMaterialNames{"G1", "K1", "G2", "K2"};

inline int material_index(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == kMaterialNames[i]) return i;
  throw std::invalid_argument("unknown material parameter '" + name + "' (expected G1, K1, G2 or K2)");
}

/// Shear and bulk moduli of matrix (phase 1) and inclusions (phase 2).
struct MaterialParams {
  std::array<double, 4> values{1.0, 3.0, 4.0, 12.0};  // G1, K1, G2, K2
  std::array<bool, 4> fixed{false, false, false, false};

  double G(int phase) const { return values[2 * (phase - 1)]; }
  double K(int phase) const { return values[2 * (phase - 1) + 1]; }

  double poisson(int phase) const {
    return (3.0 * K(phase) - 2.0 * G(phase)) / (2.0 * (3.0 * K(phase) + G(phase)));
  }

  int free_count() const {
    int n = 0;
    for (bool f : fixed) n += f ? 0 : 1;
    return n;
  }

  bool valid() const {
    for (double v : values)
      if (!(v > 0.0) || !std::isfinite(v)) return false;
    for (int p = 1; p <= 2; ++p) {
      const double nu = poisson(p);
      if (!(nu > 0.0 && nu < 0.5)) return false;
    }
    return true;
  }

  void validate() const {
    if (!valid()) throw InvalidMaterial("material moduli must be positive with Poisson ratios in (0, 0.5)");
  }

  /// Reference moduli of the virtual experiment.
  static MaterialParams reference() { return MaterialParams{}; }
};

namespace neo_hookean {

inline Mat2 cofactor_transpose_inverse(const Mat2& F, double J) {
  // F^{-T}
  Mat2 H;
  H << F(1, 1), -F(1, 0), -F(0, 1), F(0, 0);
  return H / J;
}

inline double checked_det(const Mat2& F) {
  const double J = F.determinant();
  if (!(J > 0.0)) throw NonPositiveJacobian("det(F) = " + std::to_string(J) + " <= 0");
  return J;
}

inline double energy_density(const Mat2& F, double G, double K) {
  const double J = checked_det(F);
  const double I1bar = std::pow(J, -2.0 / 3.0) * (F.squaredNorm() + 1.0);
  const double lnJ = std::log(J);
  return 0.5 * G * (I1bar - 3.0) + 0.5 * K * lnJ * lnJ;
}

inline Mat2 first_pk_stress(const Mat2& F, double G, double K) {
  const double J = checked_det(F);
  const double Jm23 = std::pow(J, -2.0 / 3.0);
  const double I1bar = Jm23 * (F.squaredNorm() + 1.0);
  const Mat2 H = cofactor_transpose_inverse(F, J);
  return G * (Jm23 * F - (I1bar / 3.0) * H) + K * std::log(J) * H;
}

/// dP/dF as a 4x4 matrix over the flattened index (iJ) -> 2 i + J.
inline Tangent material_tangent(const Mat2& F, double G, double K) {
  const double J = checked_det(F);
  const double Jm23 = std::pow(J, -2.0 / 3.0);
  const double I1bar = Jm23 * (F.squaredNorm() + 1.0);
  const double lnJ = std::log(J);
  const Mat2 H = cofactor_transpose_inverse(F, J);
  Tangent A;
  for (int i = 0; i < 2; ++i)
    for (int Jx = 0; Jx < 2; ++Jx)
      for (int k = 0; k < 2; ++k)
        for (int L = 0; L < 2; ++L) {
          const double d = (i == k && Jx == L) ? 1.0 : 0.0;
          const double HH = H(i, L) * H(k, Jx);
          double a = G * Jm23 * (d - (2.0 / 3.0) * (F(i, Jx) * H(k, L) + H(i, Jx) * F(k, L)));
          a += G * I1bar / 3.0 * ((2.0 / 3.0) * H(k, L) * H(i, Jx) + HH);
          a += K * (H(k, L) * H(i, Jx) - lnJ * HH);
          A(2 * i + Jx, 2 * k + L) = a;
        }
  return A;
}

}  // namespace neo_hookean
}  // namespace bayesdic

#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bayesdic {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

//! Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BAYESDIC_DEFINE_ERROR(Name) \
  class Name : public Error {       \
   public:                          \
    using Error::Error;             \
  }

// geometry
BAYESDIC_DEFINE_ERROR(PackingInfeasible);
BAYESDIC_DEFINE_ERROR(MeshDegenerate);
BAYESDIC_DEFINE_ERROR(WindowOutsideDomain);
BAYESDIC_DEFINE_ERROR(MeshFormatError);
// fem
BAYESDIC_DEFINE_ERROR(NonPositiveJacobian);
BAYESDIC_DEFINE_ERROR(NewtonDiverged);
BAYESDIC_DEFINE_ERROR(ElementInverted);
BAYESDIC_DEFINE_ERROR(PointOutsideMesh);
BAYESDIC_DEFINE_ERROR(InvalidMaterial);
BAYESDIC_DEFINE_ERROR(InvalidDirichletData);
// imaging / correlation
BAYESDIC_DEFINE_ERROR(GeometryMismatch);
BAYESDIC_DEFINE_ERROR(ImageFormatError);
BAYESDIC_DEFINE_ERROR(PosteriorEvaluationFailed);
// identification
BAYESDIC_DEFINE_ERROR(SingularNormalMatrix);
BAYESDIC_DEFINE_ERROR(InitialStateInfeasible);
BAYESDIC_DEFINE_ERROR(TuningFailed);
BAYESDIC_DEFINE_ERROR(ChainTooShort);
BAYESDIC_DEFINE_ERROR(StrideTooLarge);
BAYESDIC_DEFINE_ERROR(PivotNonPositive);
BAYESDIC_DEFINE_ERROR(ZeroReference);
BAYESDIC_DEFINE_ERROR(ParseError);
BAYESDIC_DEFINE_ERROR(ConfigError);

#undef BAYESDIC_DEFINE_ERROR

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  Vec2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
  bool contains(const Vec2& p, double tol = 0.0) const {
    return p.x() >= x0 - tol && p.x() <= x1 + tol && p.y() >= y0 - tol && p.y() <= y1 + tol;
  }
  bool contains(const Rect& r, double tol = 0.0) const {
    return r.x0 >= x0 - tol && r.x1 <= x1 + tol && r.y0 >= y0 - tol && r.y1 <= y1 + tol;
  }
  bool operator==(const Rect&) const = default;
};

// ---------------------------------------------------------------------------
// Random streams. Every consumer of randomness gets its own engine seeded from
// (master seed, stream name), so results do not depend on call order.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  return splitmix64(master ^ splitmix64(fnv1a64(stream)));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index) {
  return splitmix64(derive_seed(master, stream) + splitmix64(index + 1));
}

using Rng = std::mt19937_64;

}  // namespace bayesdic

#pragma once

// Identification vector layout, boundary-DOF reduction and the image forward
// model: parameters -> MVE solve -> displacement at ROI pixels -> warped image.

#include "bayesdic/correlation.hpp"
#include "bayesdic/fem.hpp"
#include "bayesdic/imaging.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace bayesdic {

// ---------------------------------------------------------------------------
// Boundary reduction

/// Keeps every stride-th boundary-loop node plus the loop's anchors; the other
/// nodes follow by linear interpolation in arc length between retained
/// neighbours. Kinematic vectors are [u_x, u_y] pairs in loop order.
class BoundaryReduction {
 public:
  BoundaryReduction() = default;
  BoundaryReduction(const Mesh& mesh, int stride) : stride_(stride) {
    const int nb = static_cast<int>(mesh.boundary_nodes.size());
    if (stride < 1) throw std::invalid_argument("reduce_boundary: stride must be >= 1");
    if (nb < 2 * stride) throw StrideTooLarge("boundary loop has fewer than 2 * stride nodes");
    std::vector<bool> keep(nb, false);
    for (int p = 0; p < nb; p += stride) keep[p] = true;
    for (int a : mesh.boundary_anchors) keep[a] = true;
    for (int p = 0; p < nb; ++p)
      if (keep[p]) retained_.push_back(p);
    full_count_ = nb;
    const double L = mesh.boundary_length;
    const auto& s = mesh.boundary_arclength;
    left_.resize(nb);
    weight_.resize(nb);
    const int nr = static_cast<int>(retained_.size());
    for (int r = 0; r < nr; ++r) {
      const int a = retained_[r];
      const int b = retained_[(r + 1) % nr];
      const double sa = s[a];
      const double sb = (r + 1 < nr) ? s[b] : L + s[b];
      for (int p = a; p < (r + 1 < nr ? b : nb); ++p) {
        left_[p] = r;
        weight_[p] = (s[p] - sa) / (sb - sa);
      }
    }
  }

  int stride() const { return stride_; }
  const std::vector<int>& retained() const { return retained_; }
  int full_nodes() const { return full_count_; }
  int reduced_size() const { return 2 * static_cast<int>(retained_.size()); }

  Eigen::VectorXd reduce(const std::vector<Vec2>& full) const {
    if (static_cast<int>(full.size()) != full_count_) throw std::invalid_argument("reduce: wrong boundary size");
    Eigen::VectorXd r(reduced_size());
    for (std::size_t k = 0; k < retained_.size(); ++k) r.segment<2>(2 * k) = full[retained_[k]];
    return r;
  }

  std::vector<Vec2> expand(const Eigen::VectorXd& reduced) const {
    if (reduced.size() != reduced_size()) throw std::invalid_argument("expand: wrong reduced size");
    const int nr = static_cast<int>(retained_.size());
    std::vector<Vec2> full(full_count_);
    for (int p = 0; p < full_count_; ++p) {
      const int r = left_[p];
      const double t = weight_[p];
      full[p] = (1.0 - t) * reduced.segment<2>(2 * r) + t * reduced.segment<2>(2 * ((r + 1) % nr));
    }
    return full;
  }

 private:
  int stride_ = 1;
  int full_count_ = 0;
  std::vector<int> retained_;
  std::vector<int> left_;
  std::vector<double> weight_;
};

inline std::pair<Eigen::VectorXd, BoundaryReduction> reduce_boundary(const std::vector<Vec2>& full_kin,
                                                                     const Mesh& mesh, int stride) {
  BoundaryReduction red(mesh, stride);
  return {red.reduce(full_kin), std::move(red)};
}

inline Eigen::VectorXd flatten(const std::vector<Vec2>& v) {
  Eigen::VectorXd out(2 * static_cast<Eigen::Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) out.segment<2>(2 * k) = v[k];
  return out;
}

inline std::vector<Vec2> unflatten(const Eigen::VectorXd& x) {
  std::vector<Vec2> out(static_cast<std::size_t>(x.size() / 2));
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = x.segment<2>(2 * k);
  return out;
}

// ---------------------------------------------------------------------------
// Parameter layout

/// Identification vector [free moduli..., kinematic entries...]. Fixed moduli
/// keep the values of `base`.
struct ParameterLayout {
  MaterialParams base;
  std::vector<int> mat_free;
  int kin_count = 0;

  ParameterLayout() = default;
  ParameterLayout(const MaterialParams& b, int kin) : base(b), kin_count(kin) {
    for (int i = 0; i < 4; ++i)
      if (!b.fixed[i]) mat_free.push_back(i);
  }

  int mat_count() const { return static_cast<int>(mat_free.size()); }
  int size() const { return mat_count() + kin_count; }

  Eigen::VectorXd pack(const MaterialParams& m, const Eigen::VectorXd& kin) const {
    if (kin.size() != kin_count) throw std::invalid_argument("ParameterLayout: wrong kinematic size");
    Eigen::VectorXd x(size());
    for (int k = 0; k < mat_count(); ++k) x[k] = m.values[mat_free[k]];
    x.tail(kin_count) = kin;
    return x;
  }

  Eigen::VectorXd mat_block(const Eigen::VectorXd& x) const { return x.head(mat_count()); }
  Eigen::VectorXd kin_block(const Eigen::VectorXd& x) const { return x.tail(kin_count); }

  MaterialParams material(const Eigen::VectorXd& x) const {
    MaterialParams m = base;
    for (int k = 0; k < mat_count(); ++k) m.values[mat_free[k]] = x[k];
    return m;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (int i : mat_free) n.emplace_back(kMaterialNames[i]);
    for (int k = 0; k < kin_count / 2; ++k) {
      n.push_back("ux" + std::to_string(k));
      n.push_back("uy" + std::to_string(k));
    }
    return n;
  }

  /// Per-entry magnitude used for finite-difference steps and scaled norms.
  Eigen::VectorXd scales(double kin_scale) const {
    Eigen::VectorXd s(size());
    for (int k = 0; k < mat_count(); ++k) s[k] = std::abs(base.values[mat_free[k]]);
    s.tail(kin_count).setConstant(kin_scale);
    return s;
  }
};

// ---------------------------------------------------------------------------
// Forward model

/// Maps moduli and boundary values to the deformed image pulled back onto the
/// ROI pixels of the reference grid. Keeps the last equilibrium field as the
/// starting point of the next solve (one load increment), and falls back to a
/// full incremental solve from zero when that fails. Not thread-safe.
class ForwardModel {
 public:
  ForwardModel(std::shared_ptr<const Mesh> mve, const Image& deformed, const PixelMask& roi,
               const SolverOptions& opts)
      : solver_(mve, mve->boundary_nodes), g_(deformed), opts_(opts) {
    const PointLocator locator(mve);
    plan_ = std::make_shared<RasterPlan>(locator, deformed.geometry, &roi);
  }

  const Mesh& mesh() const { return solver_.mesh(); }
  const RasterPlan& plan() const { return *plan_; }
  const Image& deformed() const { return g_; }
  std::size_t solves() const { return solves_; }

  /// Boundary used when the layout has no kinematic entries.
  void set_boundary(std::vector<Vec2> b) { boundary_ = std::move(b); }
  const std::vector<Vec2>& boundary() const { return boundary_; }
  /// Maps kinematic entries to full boundary values (identity when unset).
  void set_reduction(std::optional<BoundaryReduction> r) { reduction_ = std::move(r); }

  /// Samples of the image at the ROI pixels (ROI order), NaN where the
  /// interpolation stencil leaves the image.
  static std::vector<double> roi_samples(const Image& img, const RasterPlan& plan) {
    std::vector<double> out;
    out.reserve(plan.pixels().size());
    for (int k : plan.pixels()) out.push_back(img.values[k]);
    return out;
  }

  DisplacementField solve(const MaterialParams& m, const std::vector<Vec2>& boundary) {
    ++solves_;
    if (last_) {
      try {
        SolverOptions warm = opts_;
        warm.n_increments = 1;
        last_ = solver_.solve(m, boundary, warm, &*last_);
        return *last_;
      } catch (const Error&) {
      }
    }
    last_ = solver_.solve(m, boundary, opts_);
    return *last_;
  }

  std::vector<double> warp(const DisplacementField& u) {
    plan_->apply(u, disp_);
    std::vector<double> out(disp_.size());
    const double inv = 1.0 / g_.geometry.pixel_size;
    const auto& px = plan_->pixels();
    const int w = g_.width();
    for (std::size_t k = 0; k < disp_.size(); ++k) {
      const int i = px[k] % w, j = px[k] / w;
      bool ok = false;
      const double v = sample_bicubic(g_, i + disp_[k].x() * inv, j + disp_[k].y() * inv, ok);
      out[k] = ok ? v : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
  }

  std::vector<double> operator()(const MaterialParams& m, const std::vector<Vec2>& boundary) {
    return warp(solve(m, boundary));
  }

  std::vector<Vec2> boundary_of(const ParameterLayout& layout, const Eigen::VectorXd& x) const {
    if (layout.kin_count == 0) return boundary_;
    const Eigen::VectorXd kin = layout.kin_block(x);
    return reduction_ ? reduction_->expand(kin) : unflatten(kin);
  }

  std::vector<double> operator()(const ParameterLayout& layout, const Eigen::VectorXd& x) {
    return (*this)(layout.material(x), boundary_of(layout, x));
  }

 private:
  NonlinearSolver solver_;
  Image g_;
  SolverOptions opts_;
  std::shared_ptr<RasterPlan> plan_;
  std::vector<Vec2> boundary_;
  std::optional<BoundaryReduction> reduction_;
  std::optional<DisplacementField> last_;
  std::vector<Vec2> disp_;
  std::size_t solves_ = 0;
};

}  // namespace bayesdic

#pragma once

// Gauss-Newton identification on the image residual. IDIC treats the free
// moduli as unknowns under fixed boundary data; BE-IDIC adds the boundary
// displacements to the unknowns.

#include "bayesdic/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <vector>

namespace bayesdic {

struct GaussNewtonOptions {
  double fd_step = 1e-3;
  int max_iters = 20;
  double step_tol = 1e-5;
  double line_search_shrink = 0.5;
  int max_shrinks = 8;
  double max_condition = 1e12;

  void validate() const {
    if (!(fd_step > 0.0)) throw std::invalid_argument("GaussNewtonOptions: fd_step must be > 0");
    if (!(step_tol > 0.0)) throw std::invalid_argument("GaussNewtonOptions: step_tol must be > 0");
    if (max_iters < 1) throw std::invalid_argument("GaussNewtonOptions: max_iters must be >= 1");
    if (!(line_search_shrink > 0.0 && line_search_shrink < 1.0))
      throw std::invalid_argument("GaussNewtonOptions: line_search_shrink must be in (0, 1)");
    if (max_shrinks < 0) throw std::invalid_argument("GaussNewtonOptions: max_shrinks must be >= 0");
  }
};

struct TraceEntry {
  int iter = 0;
  double cost = 0.0;
  double step_norm = 0.0;
  Eigen::VectorXd params;
};

struct GaussNewtonResult {
  Eigen::VectorXd params;
  double cost = 0.0;
  std::vector<TraceEntry> trace;
  bool converged = false;
  int iterations = 0;
  std::size_t forward_evaluations = 0;
};

/// Raised when the iteration cap is hit; carries the last iterate.
class MaxItersReached : public Error {
 public:
  explicit MaxItersReached(GaussNewtonResult r)
      : Error("Gauss-Newton reached the iteration limit"), result(std::move(r)) {}
  GaussNewtonResult result;
};

/// Maps a parameter vector to warped ROI samples.
using ForwardFn = std::function<std::vector<double>(const Eigen::VectorXd&)>;

/// Central-difference sensitivities of the warped samples, one column per
/// parameter, with steps fd_step * scales[i]. When one probe leaves the
/// admissible set and `base` (samples at x) is given, that column falls back to
/// a one-sided difference. Samples that are unusable at any of the evaluations
/// get zero rows.
inline Eigen::MatrixXd sensitivity_fields(const ForwardFn& forward, const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& scales, double fd_step,
                                          const std::vector<double>* base = nullptr) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd S;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = fd_step * scales[i];
    std::vector<double> gp, gm;
    std::string why;
    auto probe = [&](double dh, std::vector<double>& out) {
      Eigen::VectorXd xs = x;
      xs[i] += dh;
      try {
        out = forward(xs);
        return true;
      } catch (const Error& e) {
        why = e.what();
        return false;
      }
    };
    const bool up = probe(h, gp), down = probe(-h, gm);
    double span = 2.0 * h;
    if (!up || !down) {
      if ((!up && !down) || !base)
        throw PosteriorEvaluationFailed("sensitivity of parameter " + std::to_string(i) + ": " + why);
      (up ? gm : gp) = *base;
      span = h;
    }
    if (i == 0) S.setZero(static_cast<Eigen::Index>(gp.size()), n);
    for (std::size_t k = 0; k < gp.size(); ++k) {
      const double d = (gp[k] - gm[k]) / span;
      S(static_cast<Eigen::Index>(k), i) = std::isfinite(d) ? d : 0.0;
    }
  }
  return S;
}

namespace detail {

struct Evaluation {
  std::vector<double> g;
  double cost = std::numeric_limits<double>::infinity();
};

inline Evaluation evaluate(const ForwardFn& forward, const std::vector<double>& f, const Eigen::VectorXd& x,
                           double pixel_area) {
  Evaluation ev;
  try {
    ev.g = forward(x);
  } catch (const Error&) {
    return ev;
  }
  ev.cost = dic_cost(residual_norm(f, ev.g), pixel_area);
  return ev;
}

}  // namespace detail

/// Minimizes 1/2 sum (f - g(x))^2 * pixel_area by Gauss-Newton with
/// backtracking. `f` holds reference ROI samples, `scales` the magnitude of
/// each parameter (finite-difference steps and the scaled step norm).
inline GaussNewtonResult gauss_newton(const std::vector<double>& f, const ForwardFn& forward,
                                      const Eigen::VectorXd& x0, const Eigen::VectorXd& scales, double pixel_area,
                                      const GaussNewtonOptions& opts = {}) {
  opts.validate();
  const Eigen::Index n = x0.size();
  if (scales.size() != n) throw std::invalid_argument("gauss_newton: scales size mismatch");
  GaussNewtonResult res;
  res.params = x0;
  auto ev = detail::evaluate(forward, f, x0, pixel_area);
  ++res.forward_evaluations;
  if (!std::isfinite(ev.cost)) throw PosteriorEvaluationFailed("forward model fails at the initial parameters");
  res.cost = ev.cost;
  res.trace.push_back({0, ev.cost, 0.0, x0});

  for (int it = 1; it <= opts.max_iters; ++it) {
    const Eigen::MatrixXd S = sensitivity_fields(forward, res.params, scales, opts.fd_step, &ev.g);
    res.forward_evaluations += 2 * static_cast<std::size_t>(n);
    Eigen::VectorXd r(static_cast<Eigen::Index>(f.size()));
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double d = f[k] - ev.g[k];
      r[static_cast<Eigen::Index>(k)] = std::isfinite(d) ? d : 0.0;
    }
    // Work in scaled variables y = x / scales.
    const Eigen::MatrixXd Ss = S * scales.asDiagonal();
    Eigen::MatrixXd H = Ss.transpose() * Ss;
    const Eigen::VectorXd b = Ss.transpose() * r;

    // Conditioning of the Jacobi-equilibrated normal matrix.
    Eigen::VectorXd d = H.diagonal().cwiseMax(std::numeric_limits<double>::min()).cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd He = d.asDiagonal() * H * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(He, Eigen::EigenvaluesOnly);
    const double lmax = eig.eigenvalues().maxCoeff();
    const double lmin = eig.eigenvalues().minCoeff();
    if (!(lmax > 0.0) || lmin <= lmax / opts.max_condition)
      throw SingularNormalMatrix("normal matrix is singular (condition " +
                                 std::to_string(lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity()) +
                                 ")");
    H.diagonal().array() += 1e-12 * H.trace();
    const Eigen::VectorXd dy = H.ldlt().solve(b);
    const Eigen::VectorXd dx = scales.cwiseProduct(dy);

    double alpha = 1.0;
    bool accepted = false;
    detail::Evaluation trial;
    for (int s = 0; s <= opts.max_shrinks; ++s) {
      trial = detail::evaluate(forward, f, res.params + alpha * dx, pixel_area);
      ++res.forward_evaluations;
      if (trial.cost <= res.cost) {
        accepted = true;
        break;
      }
      alpha *= opts.line_search_shrink;
    }
    res.iterations = it;
    if (!accepted) {
      // No decrease along the Gauss-Newton direction: the cost is at its floor.
      res.trace.push_back({it, res.cost, 0.0, res.params});
      res.converged = true;
      return res;
    }
    const double step_norm = (alpha * dy).norm();
    res.params += alpha * dx;
    res.cost = trial.cost;
    ev = std::move(trial);
    res.trace.push_back({it, res.cost, step_norm, res.params});
    if (step_norm < opts.step_tol) {
      res.converged = true;
      return res;
    }
  }
  throw MaxItersReached(std::move(res));
}

/// Classic IDIC: free moduli only, boundary data fixed inside `model`.
inline GaussNewtonResult idic(const std::vector<double>& f, ForwardModel& model, const ParameterLayout& layout,
                              const Eigen::VectorXd& x0, const GaussNewtonOptions& opts = {}) {
  if (layout.kin_count != 0) throw std::invalid_argument("idic: layout must not contain kinematic entries");
  const double area = model.deformed().geometry.pixel_size * model.deformed().geometry.pixel_size;
  ForwardFn fwd = [&](const Eigen::VectorXd& x) { return model(layout, x); };
  return gauss_newton(f, fwd, x0, layout.scales(1.0), area, opts);
}

/// BE-IDIC: moduli and (possibly reduced) boundary displacements.
inline GaussNewtonResult be_idic(const std::vector<double>& f, ForwardModel& model, const ParameterLayout& layout,
                                 const Eigen::VectorXd& x0, double kin_scale, const GaussNewtonOptions& opts = {}) {
  if (layout.kin_count == 0) throw std::invalid_argument("be_idic: layout needs kinematic entries");
  if (!(kin_scale > 0.0)) throw std::invalid_argument("be_idic: kinematic scale must be > 0");
  const double area = model.deformed().geometry.pixel_size * model.deformed().geometry.pixel_size;
  ForwardFn fwd = [&](const Eigen::VectorXd& x) { return model(layout, x); };
  return gauss_newton(f, fwd, x0, layout.scales(kin_scale), area, opts);
}

/// CSV: iter, cost, step_norm, then one column per parameter.
inline void write_trace(std::ostream& os, const GaussNewtonResult& r, const std::vector<std::string>& names) {
  os << "iter,cost,step_norm";
  for (const auto& n : names) os << ',' << n;
  os << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& t : r.trace) {
    os << t.iter << ',' << t.cost << ',' << t.step_norm;
    for (Eigen::Index i = 0; i < t.params.size(); ++i) os << ',' << t.params[i];
    os << '\n';
  }
}

}  // namespace bayesdic

#pragma once

// Image-matching cost, Gaussian likelihood, priors and the unnormalized log
// posterior. ROI samples that could not be interpolated are carried as NaN and
// skipped by every sum here.

#include "bayesdic/imaging.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace bayesdic {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Sum of squared residuals over usable samples and their count.
struct ResidualNorm {
  double sum_squares = 0.0;
  std::size_t count = 0;
};

inline ResidualNorm residual_norm(const std::vector<double>& f, const std::vector<double>& g) {
  if (f.size() != g.size()) throw GeometryMismatch("sample vectors differ in length");
  ResidualNorm n;
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (!std::isfinite(g[k]) || !std::isfinite(f[k])) continue;
    const double r = f[k] - g[k];
    n.sum_squares += r * r;
    ++n.count;
  }
  return n;
}

inline ResidualNorm residual_norm(const Image& f, const Image& g_warped, const PixelMask& roi) {
  if (!(f.geometry == g_warped.geometry)) throw GeometryMismatch("images differ in geometry");
  if (roi.size() != f.values.size()) throw GeometryMismatch("ROI mask size differs from the image");
  ResidualNorm n;
  for (std::size_t k = 0; k < roi.size(); ++k) {
    if (!roi[k] || !std::isfinite(g_warped.values[k])) continue;
    const double r = f.values[k] - g_warped.values[k];
    n.sum_squares += r * r;
    ++n.count;
  }
  return n;
}

inline double dic_cost(const ResidualNorm& n, double pixel_area) { return 0.5 * n.sum_squares * pixel_area; }

/// 1/2 sum over the ROI of (f - g)^2 times the pixel area.
inline double dic_cost(const Image& f, const Image& g_warped, const PixelMask& roi) {
  const double a = f.geometry.pixel_size * f.geometry.pixel_size;
  return dic_cost(residual_norm(f, g_warped, roi), a);
}

/// Log of the Gaussian likelihood of the image difference, whose per-pixel
/// variance is 2 sigma_eta^2 because both images carry noise.
inline double log_likelihood(const ResidualNorm& n, double sigma_eta) {
  if (!(sigma_eta > 0.0)) throw std::invalid_argument("log_likelihood: sigma_eta must be > 0");
  return -static_cast<double>(n.count) * std::log(2.0 * sigma_eta * std::sqrt(std::numbers::pi)) -
         n.sum_squares / (4.0 * sigma_eta * sigma_eta);
}

inline double log_likelihood(const Image& f, const Image& g_warped, const PixelMask& roi, double sigma_eta) {
  return log_likelihood(residual_norm(f, g_warped, roi), sigma_eta);
}

/// Gaussian prior on the free moduli (flat when mat_sigma is infinite) and a
/// uniform box prior on the kinematic entries.
struct PriorSettings {
  Eigen::VectorXd mat_mean;
  double mat_sigma = 1.0;
  Eigen::VectorXd kin_center;
  double kin_halfwidth = 0.0;
  double sigma_eta = 2.55;

  bool flat_material() const { return std::isinf(mat_sigma); }

  void validate() const {
    if (!(mat_sigma > 0.0)) throw std::invalid_argument("PriorSettings: mat_sigma must be > 0");
    if (!(kin_halfwidth >= 0.0)) throw std::invalid_argument("PriorSettings: kin_halfwidth must be >= 0");
    if (!(sigma_eta > 0.0)) throw std::invalid_argument("PriorSettings: sigma_eta must be > 0");
  }
};

inline double log_prior_material(const Eigen::VectorXd& mat, const PriorSettings& prior) {
  if (mat.size() != prior.mat_mean.size()) throw std::invalid_argument("log_prior: material size mismatch");
  if (prior.flat_material()) return 0.0;
  const double s = prior.mat_sigma;
  const double n = static_cast<double>(mat.size());
  return -0.5 * (mat - prior.mat_mean).squaredNorm() / (s * s) - n * (std::log(s) + 0.5 * std::log(2.0 * std::numbers::pi));
}

inline double log_prior_kinematic(const Eigen::VectorXd& kin, const PriorSettings& prior) {
  if (kin.size() != prior.kin_center.size()) throw std::invalid_argument("log_prior: kinematic size mismatch");
  if (kin.size() == 0) return 0.0;
  const double e = prior.kin_halfwidth;
  for (Eigen::Index i = 0; i < kin.size(); ++i)
    if (!(std::abs(kin[i] - prior.kin_center[i]) <= e)) return kNegInf;
  // A zero-width box is a point mass: density is taken as 1 on its support.
  if (e == 0.0) return 0.0;
  return -static_cast<double>(kin.size()) * std::log(2.0 * e);
}

inline double log_prior(const Eigen::VectorXd& mat, const Eigen::VectorXd& kin, const PriorSettings& prior) {
  const double k = log_prior_kinematic(kin, prior);
  if (k == kNegInf) return kNegInf;
  return log_prior_material(mat, prior) + k;
}

/// log prior + log likelihood. `forward(mat, kin)` returns warped ROI samples
/// aligned with `f_roi`. The forward model is skipped when the prior vanishes;
/// any library error it raises surfaces as PosteriorEvaluationFailed.
template <class Forward>
double log_posterior(const Eigen::VectorXd& mat, const Eigen::VectorXd& kin, const PriorSettings& prior,
                     const std::vector<double>& f_roi, Forward&& forward) {
  const double lp = log_prior(mat, kin, prior);
  if (lp == kNegInf) return kNegInf;
  std::vector<double> g;
  try {
    g = forward(mat, kin);
  } catch (const PosteriorEvaluationFailed&) {
    throw;
  } catch (const Error& e) {
    throw PosteriorEvaluationFailed(std::string("forward model failed: ") + e.what());
  }
  return lp + log_likelihood(residual_norm(f_roi, g), prior.sigma_eta);
}

}  // namespace bayesdic

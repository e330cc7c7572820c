#pragma once

// Random-walk Metropolis-Hastings, step-size tuning, chain summaries (KDE
// modes, credible intervals, correlations) and post-hoc normalization.

#include "bayesdic/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace bayesdic {

/// Per-entry proposal standard deviations: material block then kinematic block.
struct ProposalSettings {
  std::vector<double> sigma_mat;
  std::vector<double> sigma_kin;
  std::uint64_t seed = 0;

  Eigen::VectorXd steps() const {
    Eigen::VectorXd s(static_cast<Eigen::Index>(sigma_mat.size() + sigma_kin.size()));
    Eigen::Index k = 0;
    for (double v : sigma_mat) s[k++] = v;
    for (double v : sigma_kin) s[k++] = v;
    return s;
  }

  void validate() const {
    for (double v : sigma_mat)
      if (!(v > 0.0)) throw std::invalid_argument("ProposalSettings: step sizes must be > 0");
    for (double v : sigma_kin)
      if (!(v > 0.0)) throw std::invalid_argument("ProposalSettings: step sizes must be > 0");
  }

  ProposalSettings scaled(double factor) const {
    ProposalSettings p = *this;
    for (double& v : p.sigma_mat) v *= factor;
    for (double& v : p.sigma_kin) v *= factor;
    return p;
  }
};

/// Material steps at `fraction` of (ref_i / sum_j ref_j) * prior_sigma over the
/// free entries; one kinematic step equal to `kin_fraction` of their sum.
inline ProposalSettings default_proposal(const ParameterLayout& layout, double prior_sigma, double fraction,
                                         double kin_fraction, std::uint64_t seed) {
  ProposalSettings p;
  p.seed = seed;
  double total = 0.0;
  for (double v : layout.base.values) total += v;
  const double sigma = std::isfinite(prior_sigma) ? prior_sigma : 1.0;
  for (int i : layout.mat_free) p.sigma_mat.push_back(fraction * layout.base.values[i] / total * sigma);
  const double sum = std::accumulate(p.sigma_mat.begin(), p.sigma_mat.end(), 0.0);
  p.sigma_kin.assign(layout.kin_count, kin_fraction * sum);
  return p;
}

/// states.row(0) is the initial state; accepted[i] records whether the move
/// into state i was accepted (accepted[0] is true by convention).
struct Chain {
  std::vector<std::string> names;
  Eigen::MatrixXd states;
  std::vector<double> log_post;
  std::vector<bool> accepted;
  int burn_in = 0;

  int size() const { return static_cast<int>(states.rows()); }

  /// Fraction of accepted moves over the N - 1 transitions.
  double acceptance_rate() const {
    if (size() < 2) return 0.0;
    return static_cast<double>(std::count(accepted.begin() + 1, accepted.end(), true)) / (size() - 1);
  }

  Eigen::MatrixXd post_burn_in() const { return states.bottomRows(size() - burn_in); }

  int column(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw std::invalid_argument("chain has no column '" + name + "'");
    return static_cast<int>(it - names.begin());
  }
};

using LogTarget = std::function<double(const Eigen::VectorXd&)>;

namespace detail {
inline double safe_target(const LogTarget& target, const Eigen::VectorXd& x) {
  try {
    const double v = target(x);
    return std::isnan(v) ? kNegInf : v;
  } catch (const Error&) {
    return kNegInf;
  }
}
}  // namespace detail

/// Random-walk Metropolis-Hastings with independent Gaussian proposals per
/// entry. Acceptance is decided as log(kappa) < target(proposal) - target(current).
inline Chain run_mha(const LogTarget& target, const Eigen::VectorXd& x1, const ProposalSettings& prop, int N, int N0,
                     std::vector<std::string> names = {}) {
  prop.validate();
  const Eigen::VectorXd step = prop.steps();
  if (step.size() != x1.size()) throw std::invalid_argument("run_mha: step count differs from the state size");
  if (N < 1 || N0 < 0 || N0 >= N) throw std::invalid_argument("run_mha: need 0 <= N0 < N");
  Chain c;
  if (names.empty())
    for (Eigen::Index i = 0; i < x1.size(); ++i) names.push_back("p" + std::to_string(i + 1));
  if (static_cast<Eigen::Index>(names.size()) != x1.size()) throw std::invalid_argument("run_mha: one name per entry");
  c.names = std::move(names);
  c.burn_in = N0;
  c.states.resize(N, x1.size());
  c.log_post.resize(N);
  c.accepted.assign(N, false);
  Eigen::VectorXd cur = x1;
  double lp = detail::safe_target(target, cur);
  if (lp == kNegInf) throw InitialStateInfeasible("target is -inf at the initial state");
  c.states.row(0) = cur;
  c.log_post[0] = lp;
  c.accepted[0] = true;
  Rng rng(derive_seed(prop.seed, "mha"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Eigen::VectorXd cand(x1.size());
  for (int i = 1; i < N; ++i) {
    for (Eigen::Index k = 0; k < cand.size(); ++k) cand[k] = cur[k] + step[k] * normal(rng);
    const double kappa = uniform(rng);
    const double lc = detail::safe_target(target, cand);
    if (lc != kNegInf && std::log(kappa) < lc - lp) {
      cur = cand;
      lp = lc;
      c.accepted[i] = true;
    }
    c.states.row(i) = cur;
    c.log_post[i] = lp;
  }
  return c;
}

/// Scales all steps by a common factor, bisecting on log(factor), until a
/// pilot chain's acceptance rate lies in [lo, hi].
inline ProposalSettings tune_acceptance(const LogTarget& target, const Eigen::VectorXd& x1,
                                        const ProposalSettings& prop, int pilot_N, int max_pilots = 12,
                                        double lo = 0.2, double hi = 0.4, double* rate_out = nullptr) {
  if (pilot_N < 500) throw std::invalid_argument("tune_acceptance: pilot_N must be >= 500");
  double f = 1.0;
  double f_small = 0.0, f_large = 0.0;  // factors known to give too high / too low acceptance
  for (int p = 0; p < max_pilots; ++p) {
    ProposalSettings trial = prop.scaled(f);
    trial.seed = derive_seed(prop.seed, "tune", static_cast<std::uint64_t>(p));
    const double rate = run_mha(target, x1, trial, pilot_N, 0).acceptance_rate();
    if (rate_out) *rate_out = rate;
    if (rate >= lo && rate <= hi) {
      ProposalSettings out = prop.scaled(f);
      return out;
    }
    if (rate > hi) f_small = f;
    else f_large = f;
    if (f_small > 0.0 && f_large > 0.0) f = std::sqrt(f_small * f_large);
    else f = rate > hi ? f * 4.0 : f / 4.0;
  }
  throw TuningFailed("acceptance rate did not reach [" + std::to_string(lo) + ", " + std::to_string(hi) + "] in " +
                     std::to_string(max_pilots) + " pilot runs");
}

// ---------------------------------------------------------------------------
// Summaries

struct KdeGrid {
  std::vector<double> x;
  std::vector<double> density;
};

struct ParameterSummary {
  std::string name;
  double mean = 0.0, std = 0.0, mode = 0.0;
  double ci95_low = 0.0, ci95_high = 0.0;
  double ci99_low = 0.0, ci99_high = 0.0;
  double bandwidth = 0.0;
  KdeGrid kde;
};

struct PosteriorSummary {
  std::vector<ParameterSummary> params;
  Eigen::MatrixXd correlation;
  int samples = 0;
  double acceptance_rate = 0.0;

  const ParameterSummary& operator[](const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw std::invalid_argument("summary has no parameter '" + name + "'");
  }
};

/// Linear-interpolated empirical quantile of sorted data.
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  const double pos = q * (sorted.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= sorted.size()) return sorted.back();
  const double t = pos - i;
  return (1.0 - t) * sorted[i] + t * sorted[i + 1];
}

/// Gaussian KDE with Silverman's bandwidth on `points` grid points spanning
/// the sample range.
inline KdeGrid kde(const std::vector<double>& samples, double& bandwidth, int points = 512) {
  std::vector<double> s = samples;
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  const double sd = s.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  const double iqr = quantile(s, 0.75) - quantile(s, 0.25);
  double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  bandwidth = 0.9 * spread * std::pow(n, -0.2);
  KdeGrid g;
  g.x.resize(points);
  g.density.assign(points, 0.0);
  const double a = s.front(), b = s.back();
  for (int k = 0; k < points; ++k) g.x[k] = points > 1 ? a + (b - a) * k / (points - 1) : a;
  if (!(bandwidth > 0.0)) {
    g.density.assign(points, 0.0);
    g.density[0] = 1.0;
    return g;
  }
  const double norm = 1.0 / (n * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  const double cut = 8.0 * bandwidth;
  for (int k = 0; k < points; ++k) {
    const double x = g.x[k];
    auto lo_it = std::lower_bound(s.begin(), s.end(), x - cut);
    auto hi_it = std::upper_bound(s.begin(), s.end(), x + cut);
    double acc = 0.0;
    for (auto it = lo_it; it != hi_it; ++it) {
      const double z = (x - *it) / bandwidth;
      acc += std::exp(-0.5 * z * z);
    }
    g.density[k] = acc * norm;
  }
  return g;
}

inline PosteriorSummary summarize(const Chain& chain, int grid_points = 512) {
  const int n = chain.size() - chain.burn_in;
  if (n < 100) throw ChainTooShort("fewer than 100 post-burn-in samples");
  const Eigen::MatrixXd S = chain.post_burn_in();
  PosteriorSummary out;
  out.samples = n;
  out.acceptance_rate = chain.acceptance_rate();
  const Eigen::Index m = S.cols();
  const Eigen::RowVectorXd mean = S.colwise().mean();
  const Eigen::MatrixXd C = S.rowwise() - mean;
  const Eigen::MatrixXd cov = (C.transpose() * C) / std::max(1, n - 1);
  out.correlation.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = std::sqrt(cov(i, i) * cov(j, j));
      out.correlation(i, j) = d > 0.0 ? cov(i, j) / d : (i == j ? 1.0 : 0.0);
    }
  for (Eigen::Index j = 0; j < m; ++j) {
    ParameterSummary p;
    p.name = j < static_cast<Eigen::Index>(chain.names.size()) ? chain.names[j] : "p" + std::to_string(j + 1);
    std::vector<double> v(S.col(j).data(), S.col(j).data() + n);
    p.mean = mean[j];
    p.std = std::sqrt(cov(j, j));
    p.kde = kde(v, p.bandwidth, grid_points);
    const auto best = std::max_element(p.kde.density.begin(), p.kde.density.end()) - p.kde.density.begin();
    p.mode = p.kde.x[best];
    std::sort(v.begin(), v.end());
    p.ci95_low = quantile(v, 0.025);
    p.ci95_high = quantile(v, 0.975);
    p.ci99_low = quantile(v, 0.005);
    p.ci99_high = quantile(v, 0.995);
    out.params.push_back(std::move(p));
  }
  return out;
}

/// Rescales every state's moduli so that the pivot modulus equals
/// pivot_value. Requires all four moduli as chain columns.
inline Chain normalize_chain(const Chain& chain, int pivot, double pivot_value) {
  if (pivot < 0 || pivot > 3) throw std::invalid_argument("normalize_chain: pivot must be a material index");
  int cols[4];
  for (int i = 0; i < 4; ++i) cols[i] = chain.column(kMaterialNames[i]);
  Chain out = chain;
  for (int r = 0; r < chain.size(); ++r) {
    const double pv = chain.states(r, cols[pivot]);
    if (!(pv > 0.0)) throw PivotNonPositive("pivot modulus is not positive in state " + std::to_string(r));
    const double s = pivot_value / pv;
    for (int i = 0; i < 4; ++i) out.states(r, cols[i]) = chain.states(r, cols[i]) * s;
    out.states(r, cols[pivot]) = pivot_value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// I/O

/// CSV: step, accepted, log_post, one column per parameter. Burn-in is not
/// stored; callers pass it back to read_chain.
inline void write_chain(std::ostream& os, const Chain& c) {
  os << "step,accepted,log_post";
  for (const auto& n : c.names) os << ',' << n;
  os << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int i = 0; i < c.size(); ++i) {
    os << i << ',' << (c.accepted[i] ? 1 : 0) << ',' << c.log_post[i];
    for (Eigen::Index j = 0; j < c.states.cols(); ++j) os << ',' << c.states(i, j);
    os << '\n';
  }
}

inline Chain read_chain(std::istream& is, int burn_in, const std::string& source = "chain") {
  Chain c;
  std::string line;
  int lineno = 1;
  auto fail = [&](const std::string& what) {
    throw ParseError(source + ":" + std::to_string(lineno) + ": " + what);
  };
  if (!std::getline(is, line)) fail("empty file");
  std::vector<std::string> head;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) head.push_back(cell);
  }
  if (head.size() < 4 || head[0] != "step" || head[1] != "accepted" || head[2] != "log_post")
    fail("expected header 'step,accepted,log_post,<names>'");
  c.names.assign(head.begin() + 3, head.end());
  const std::size_t m = c.names.size();
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
        if (used != cell.size()) fail("bad number '" + cell + "'");
      } catch (const std::logic_error&) {
        if (cell == "-inf") v.push_back(kNegInf);
        else fail("bad number '" + cell + "'");
      }
    }
    if (v.size() != m + 3) fail("expected " + std::to_string(m + 3) + " columns");
    if (static_cast<int>(v[0]) != static_cast<int>(rows.size())) fail("steps must be consecutive from 0");
    rows.push_back(std::move(v));
  }
  if (rows.empty()) fail("no states");
  c.states.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    c.accepted.push_back(rows[i][1] != 0.0);
    c.log_post.push_back(rows[i][2]);
    for (std::size_t j = 0; j < m; ++j) c.states(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][3 + j];
  }
  if (burn_in < 0 || burn_in >= c.size()) throw ParseError(source + ": burn-in outside the chain");
  c.burn_in = burn_in;
  return c;
}

/// `key: value` report.
inline void write_summary(std::ostream& os, const PosteriorSummary& s) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "samples: " << s.samples << '\n' << "acceptance_rate: " << s.acceptance_rate << '\n';
  for (const auto& p : s.params) {
    os << p.name << ".mean: " << p.mean << '\n'
       << p.name << ".std: " << p.std << '\n'
       << p.name << ".mode: " << p.mode << '\n'
       << p.name << ".ci95: " << p.ci95_low << ' ' << p.ci95_high << '\n'
       << p.name << ".ci99: " << p.ci99_low << ' ' << p.ci99_high << '\n'
       << p.name << ".bandwidth: " << p.bandwidth << '\n';
  }
  for (std::size_t i = 0; i < s.params.size(); ++i)
    for (std::size_t j = i + 1; j < s.params.size(); ++j)
      os << "corr." << s.params[i].name << '.' << s.params[j].name << ": "
         << s.correlation(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << '\n';
}

/// CSV: param, x, density.
inline void write_kde(std::ostream& os, const PosteriorSummary& s) {
  os << "param,x,density\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : s.params)
    for (std::size_t k = 0; k < p.kde.x.size(); ++k) os << p.name << ',' << p.kde.x[k] << ',' << p.kde.density[k] << '\n';
}

}  // namespace bayesdic

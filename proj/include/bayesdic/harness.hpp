#pragma once

// Virtual experiments: DNS dataset and image synthesis, boundary data
// extraction and perturbation, single identification runs for every method,
// error metrics and Monte-Carlo campaigns.

#include "bayesdic/idic.hpp"
#include "bayesdic/mha.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace bayesdic {

// ---------------------------------------------------------------------------
// Configuration

enum class PerturbationKind { none, smooth, noise };
enum class Method { idic, be_idic, mha, mha_relaxed, mha_nonnorm };

inline constexpr std::array<const char*, 5> kMethodNames{"idic", "be-idic", "mha", "mha-relaxed", "mha-nonnorm"};

inline std::string to_string(Method m) { return kMethodNames[static_cast<int>(m)]; }
inline Method parse_method(const std::string& s) {
  for (int i = 0; i < 5; ++i)
    if (s == kMethodNames[i]) return static_cast<Method>(i);
  throw std::invalid_argument("unknown method '" + s + "' (idic, be-idic, mha, mha-relaxed, mha-nonnorm)");
}
inline bool relaxes_boundary(Method m) { return m == Method::be_idic || m == Method::mha_relaxed; }

inline std::string to_string(LoadCase t) { return t == LoadCase::tension ? "tension" : "shear"; }
inline LoadCase parse_load_case(const std::string& s) {
  if (s == "tension") return LoadCase::tension;
  if (s == "shear") return LoadCase::shear;
  throw std::invalid_argument("unknown test '" + s + "' (tension, shear)");
}

inline std::string to_string(PerturbationKind k) {
  return k == PerturbationKind::none ? "none" : k == PerturbationKind::smooth ? "smooth" : "noise";
}
inline PerturbationKind parse_perturbation(const std::string& s) {
  if (s == "none") return PerturbationKind::none;
  if (s == "smooth") return PerturbationKind::smooth;
  if (s == "noise") return PerturbationKind::noise;
  throw std::invalid_argument("unknown perturbation '" + s + "' (none, smooth, noise)");
}

struct GeometryConfig {
  double width = 10.0, height = 10.0;
  int inclusions = 25;
  double diameter = 1.0;
  double min_gap = 0.05;
  long max_attempts = 2000000;
  double dns_edge = 0.25;
  Rect mve_window{3.0, 3.0, 7.0, 7.0};
  double mve_edge = 0.25;
  int mve_boundary_nodes = 0;
};

struct ImagingConfig {
  int fov_pixels = 256;
  double fov_margin = 1.0;  // FOV = MVE window grown by this on every side
  SpeckleSpec speckle;
  double sigma_eta = 2.55;
};

struct IdentificationConfig {
  std::string fix = "K1";        // modulus held at its reference value ("" = none)
  double initial_factor = 0.9;   // initial moduli = factor * reference
  GaussNewtonOptions gauss_newton;
};

struct MhaConfig {
  int steps = 8000;
  int burn_in = 6000;
  double prior_sigma = 1.0;
  bool flat_prior = false;        // flat prior for the non-normalized method
  double step_fraction = 0.01;
  double kin_step_fraction = 0.004;
  double ebc_fraction = 0.1;
  int stride = 1;                 // boundary reduction for relaxed methods
  bool nonnorm_relaxed = false;   // relax the boundary in the non-normalized method
  bool tune = false;
  int pilot_steps = 500;
};

struct CampaignConfig {
  std::vector<LoadCase> tests{LoadCase::tension};
  std::vector<Method> methods{Method::idic};
  PerturbationKind kind = PerturbationKind::none;
  std::vector<double> grid{0.0};
  int realizations = 5;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  GeometryConfig geometry;
  MaterialParams material;
  SolverOptions solver;
  ImagingConfig imaging;
  IdentificationConfig identification;
  MhaConfig mha;
  CampaignConfig campaign;
};

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  ExperimentConfig config;
  Microstructure micro;
  std::shared_ptr<const Mesh> dns;
  std::shared_ptr<const Mesh> mve;
  DisplacementField u_tension, u_shear;
  ImageGeometry fov;
  PixelMask roi;
  std::shared_ptr<const SpeckleField> speckle;
  Image reference;                     // clean f
  Image deformed_tension, deformed_shear;  // clean g

  const DisplacementField& dns_field(LoadCase t) const { return t == LoadCase::tension ? u_tension : u_shear; }
  const Image& deformed(LoadCase t) const { return t == LoadCase::tension ? deformed_tension : deformed_shear; }
};

inline Rect fov_window(const ExperimentConfig& c) {
  const Rect& w = c.geometry.mve_window;
  const double m = c.imaging.fov_margin;
  return Rect{w.x0 - m, w.y0 - m, w.x1 + m, w.y1 + m};
}

inline SpeckleField make_speckle(const ExperimentConfig& c) {
  SpeckleSpec s = c.imaging.speckle;
  s.seed = derive_seed(c.seed, "speckle-pattern");
  return SpeckleField(s, c.imaging.fov_pixels, c.imaging.fov_pixels);
}

/// Reference image: speckle sampled at the FOV pixel centers.
inline Image render_reference(const SpeckleField& sp, const ImageGeometry& fov) {
  Image img(fov);
  for (int j = 0; j < fov.height; ++j)
    for (int i = 0; i < fov.width; ++i) img(i, j) = sp(Vec2{double(i), double(j)});
  return img;
}

/// Deformed image: the pixel at x shows the material point X with
/// X + u(X) = x, found by fixed-point iteration on the DNS field.
inline Image render_deformed(const SpeckleField& sp, const ImageGeometry& fov, const DisplacementField& u) {
  const FieldEvaluator ev(u.mesh_ptr());
  Image img(fov);
  const double tol = 1e-13 * fov.pixel_size * fov.width;
  Vec2 shift = Vec2::Zero();  // displacement found at the previous pixel
  for (int j = 0; j < fov.height; ++j)
    for (int i = 0; i < fov.width; ++i) {
      const Vec2 x = fov.center(i, j);
      Vec2 X = x - shift;
      for (int it = 0; it < 100; ++it) {
        const Vec2 next = x - ev(u, X);
        const double d = (next - X).norm();
        X = next;
        if (d <= tol) break;
      }
      shift = x - X;
      img(i, j) = sp(fov.to_pixel(X));
    }
  return img;
}

inline Dataset prepare_dataset(const ExperimentConfig& c) {
  const auto& g = c.geometry;
  Dataset d;
  d.config = c;
  d.micro = generate_microstructure(Vec2{g.width, g.height}, g.inclusions, g.diameter, g.min_gap,
                                    derive_seed(c.seed, "microstructure"), g.max_attempts);
  d.dns = std::make_shared<const Mesh>(generate_mesh(d.micro, g.dns_edge));
  MveOptions mo;
  mo.edge_length = g.mve_edge;
  mo.boundary_node_count = g.mve_boundary_nodes;
  d.mve = std::make_shared<const Mesh>(extract_mve(*d.dns, d.micro, g.mve_window, mo));
  const Rect fw = fov_window(c);
  if (!d.dns->domain.contains(fw, 1e-12)) throw WindowOutsideDomain("field of view leaves the DNS domain");
  d.fov = ImageGeometry::covering(fw, c.imaging.fov_pixels);
  d.roi = window_mask(d.fov, g.mve_window);
  d.u_tension = solve_dns(d.dns, c.material, LoadCase::tension, c.solver);
  d.u_shear = solve_dns(d.dns, c.material, LoadCase::shear, c.solver);
  d.speckle = std::make_shared<const SpeckleField>(make_speckle(c));
  d.reference = render_reference(*d.speckle, d.fov);
  d.deformed_tension = render_deformed(*d.speckle, d.fov, d.u_tension);
  d.deformed_shear = render_deformed(*d.speckle, d.fov, d.u_shear);
  return d;
}

// ---------------------------------------------------------------------------
// Boundary data

/// DNS field at every MVE boundary node, in loop order.
inline std::vector<Vec2> extract_boundary(const DisplacementField& u_dns, const Mesh& mve) {
  const FieldEvaluator ev(u_dns.mesh_ptr());
  std::vector<Vec2> out;
  out.reserve(mve.boundary_nodes.size());
  for (int n : mve.boundary_nodes) out.push_back(ev(u_dns, mve.nodes[n]));
  return out;
}

/// Pillbox average of the DNS field over the disk of diameter epsilon *
/// diameter around each boundary node, sampled on a grid of the given spacing
/// and restricted to the DNS domain.
inline std::vector<Vec2> smooth_boundary(const DisplacementField& u_dns, const Mesh& mve, double epsilon,
                                         double diameter, double spacing) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("smooth_boundary: epsilon must be >= 0");
  if (!(spacing > 0.0)) throw std::invalid_argument("smooth_boundary: spacing must be > 0");
  if (epsilon == 0.0) return extract_boundary(u_dns, mve);
  const double R = 0.5 * epsilon * diameter;
  const int m = static_cast<int>(std::floor(R / spacing));
  const FieldEvaluator ev(u_dns.mesh_ptr());
  const Rect& dom = u_dns.mesh().domain;
  std::vector<Vec2> out;
  out.reserve(mve.boundary_nodes.size());
  for (int n : mve.boundary_nodes) {
    const Vec2 X = mve.nodes[n];
    Vec2 sum = Vec2::Zero();
    long count = 0;
    for (int j = -m; j <= m; ++j)
      for (int i = -m; i <= m; ++i) {
        const Vec2 off{i * spacing, j * spacing};
        if (off.squaredNorm() > R * R) continue;
        const Vec2 p = X + off;
        if (!dom.contains(p)) continue;
        sum += ev(u_dns, p);
        ++count;
      }
    out.push_back(sum / static_cast<double>(count));
  }
  return out;
}

inline double max_displacement(const std::vector<Vec2>& b) {
  double m = 0.0;
  for (const auto& v : b) m = std::max(m, v.norm());
  return m;
}

/// Adds sigma_bc * u_max * U(-0.5, 0.5) independently to every entry.
inline std::vector<Vec2> perturb_boundary(const std::vector<Vec2>& exact, double u_max, double sigma_bc,
                                          std::uint64_t seed) {
  if (!(sigma_bc >= 0.0)) throw std::invalid_argument("perturb_boundary: sigma_bc must be >= 0");
  std::vector<Vec2> out = exact;
  if (sigma_bc == 0.0) return out;
  Rng rng(derive_seed(seed, "boundary-noise"));
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& v : out) {
    v.x() += sigma_bc * u_max * u(rng);
    v.y() += sigma_bc * u_max * u(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Error metrics

inline std::vector<double> parameter_error(const std::vector<double>& estimate, const std::vector<double>& reference) {
  if (estimate.size() != reference.size()) throw std::invalid_argument("parameter_error: size mismatch");
  std::vector<double> e(estimate.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = (estimate[i] - reference[i]) / reference[i];
  return e;
}

inline double boundary_error(const Eigen::VectorXd& estimate, const Eigen::VectorXd& reference) {
  if (estimate.size() != reference.size()) throw std::invalid_argument("boundary_error: size mismatch");
  const double r = reference.norm();
  if (!(r > 0.0)) throw ZeroReference("reference boundary displacement is zero");
  return (estimate - reference).norm() / r;
}

inline double boundary_error(const std::vector<Vec2>& estimate, const std::vector<Vec2>& reference) {
  return boundary_error(flatten(estimate), flatten(reference));
}

// ---------------------------------------------------------------------------
// Single identification runs

/// Noisy image pair of one realization.
struct ImagePair {
  Image f, g;
};

inline ImagePair noisy_pair(const Dataset& d, LoadCase test, std::uint64_t seed) {
  const double s = d.config.imaging.sigma_eta;
  return {add_noise(d.reference, s, derive_seed(seed, "reference-noise")),
          add_noise(d.deformed(test), s, derive_seed(seed, "deformed-noise"))};
}

struct RunResult {
  Method method = Method::idic;
  std::string status = "ok";
  MaterialParams estimate;
  std::vector<Vec2> boundary;        // boundary data used or identified
  int iterations = 0;                // Gauss-Newton iterations or chain length
  double acceptance = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  std::optional<GaussNewtonResult> gauss_newton;
  std::optional<Chain> chain;        // normalized for the non-normalized method
  std::optional<Chain> raw_chain;    // non-normalized method only
  std::optional<PosteriorSummary> summary;
};

/// Moduli the identification starts from, with the pivot (if any) fixed at
/// its reference value.
inline MaterialParams initial_material(const ExperimentConfig& c, bool all_free) {
  MaterialParams m = c.material;
  m.fixed = {false, false, false, false};
  const int pivot = c.identification.fix.empty() ? -1 : material_index(c.identification.fix);
  for (int i = 0; i < 4; ++i) {
    if (!all_free && i == pivot) {
      m.fixed[i] = true;
      continue;
    }
    m.values[i] *= c.identification.initial_factor;
  }
  return m;
}

/// Runs one method on one image pair. `boundary` is the boundary data used as
/// fixed data (IDIC, MHA) or as the initial guess and prior center (relaxed
/// methods).
inline RunResult run_method(Method method, const Dataset& d, const ImagePair& images,
                            const std::vector<Vec2>& boundary, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& c = d.config;
  RunResult out;
  out.method = method;
  const bool nonnorm = method == Method::mha_nonnorm;
  const bool relaxed = relaxes_boundary(method) || (nonnorm && c.mha.nonnorm_relaxed);
  const MaterialParams m0 = initial_material(c, nonnorm);
  ForwardModel model(d.mve, images.g, d.roi, c.solver);
  model.set_boundary(boundary);
  const auto f = ForwardModel::roi_samples(images.f, model.plan());
  const double u_max = max_displacement(boundary);

  Eigen::VectorXd kin0;
  if (relaxed) {
    BoundaryReduction red(*d.mve, c.mha.stride);
    kin0 = red.reduce(boundary);
    model.set_reduction(red);
  }
  const ParameterLayout layout(m0, static_cast<int>(kin0.size()));
  const Eigen::VectorXd x0 = layout.pack(m0, kin0);

  auto finish = [&](const Eigen::VectorXd& x) {
    out.estimate = layout.material(x);
    out.boundary = model.boundary_of(layout, x);
  };

  if (method == Method::idic || method == Method::be_idic) {
    GaussNewtonResult r;
    try {
      r = method == Method::idic ? idic(f, model, layout, x0, c.identification.gauss_newton)
                                 : be_idic(f, model, layout, x0, u_max, c.identification.gauss_newton);
    } catch (MaxItersReached& e) {
      r = std::move(e.result);
      out.status = "max_iters";
    }
    out.iterations = r.iterations;
    finish(r.params);
    out.gauss_newton = std::move(r);
  } else {
    PriorSettings prior;
    prior.mat_mean = layout.mat_block(x0);
    prior.mat_sigma = (nonnorm && c.mha.flat_prior) ? std::numeric_limits<double>::infinity() : c.mha.prior_sigma;
    prior.kin_center = kin0;
    prior.kin_halfwidth = c.mha.ebc_fraction * u_max;
    prior.sigma_eta = c.imaging.sigma_eta;
    LogTarget target = [&](const Eigen::VectorXd& x) {
      return log_posterior(layout.mat_block(x), layout.kin_block(x), prior, f,
                           [&](const Eigen::VectorXd&, const Eigen::VectorXd&) { return model(layout, x); });
    };
    ProposalSettings prop = default_proposal(layout, c.mha.prior_sigma, c.mha.step_fraction, c.mha.kin_step_fraction,
                                             derive_seed(seed, "proposal"));
    if (c.mha.tune) prop = tune_acceptance(target, x0, prop, c.mha.pilot_steps);
    Chain chain = run_mha(target, x0, prop, c.mha.steps, c.mha.burn_in, layout.names());
    out.iterations = chain.size();
    out.acceptance = chain.acceptance_rate();
    if (nonnorm) {
      const int pivot = material_index(c.identification.fix.empty() ? "K1" : c.identification.fix);
      out.raw_chain = chain;
      chain = normalize_chain(chain, pivot, c.material.values[pivot]);
    }
    PosteriorSummary s = summarize(chain);
    Eigen::VectorXd modes(layout.size());
    for (int k = 0; k < layout.size(); ++k) modes[k] = s.params[k].mode;
    finish(modes);
    out.chain = std::move(chain);
    out.summary = std::move(s);
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Campaign

struct CampaignRow {
  LoadCase test = LoadCase::tension;
  double grid_value = 0.0;
  int realization = 0;
  Method method = Method::idic;
  std::string status;
  std::array<double, 4> params{};
  std::array<double, 4> rel_error{};
  double bc_error = 0.0;
  int iterations = 0;
  double acceptance = 0.0;
  double seconds = 0.0;  // wall time; kept out of the CSV tables
};

struct AggregateRow {
  LoadCase test = LoadCase::tension;
  double grid_value = 0.0;
  Method method = Method::idic;
  int used = 0, failed = 0;
  std::array<double, 4> mean{}, std{}, mean_abs_error{};
  double mean_bc_error = 0.0;
};

struct ExperimentReport {
  std::vector<CampaignRow> rows;
  std::vector<AggregateRow> aggregates;
  double seconds = 0.0;
};

inline bool usable(const CampaignRow& r) { return r.status == "ok" || r.status == "max_iters"; }

inline std::vector<AggregateRow> aggregate(const std::vector<CampaignRow>& rows) {
  std::vector<AggregateRow> out;
  auto find = [&](const CampaignRow& r) -> AggregateRow& {
    for (auto& a : out)
      if (a.test == r.test && a.grid_value == r.grid_value && a.method == r.method) return a;
    out.push_back(AggregateRow{r.test, r.grid_value, r.method});
    return out.back();
  };
  for (const auto& r : rows) {
    AggregateRow& a = find(r);
    if (!usable(r)) {
      ++a.failed;
      continue;
    }
    ++a.used;
    for (int i = 0; i < 4; ++i) {
      a.mean[i] += r.params[i];
      a.mean_abs_error[i] += std::abs(r.rel_error[i]);
    }
    a.mean_bc_error += r.bc_error;
  }
  for (auto& a : out) {
    if (a.used == 0) {
      a.mean.fill(std::numeric_limits<double>::quiet_NaN());
      a.std.fill(std::numeric_limits<double>::quiet_NaN());
      a.mean_abs_error.fill(std::numeric_limits<double>::quiet_NaN());
      a.mean_bc_error = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    for (int i = 0; i < 4; ++i) {
      a.mean[i] /= a.used;
      a.mean_abs_error[i] /= a.used;
    }
    a.mean_bc_error /= a.used;
  }
  for (const auto& r : rows) {
    if (!usable(r)) continue;
    AggregateRow& a = find(r);
    for (int i = 0; i < 4; ++i) a.std[i] += (r.params[i] - a.mean[i]) * (r.params[i] - a.mean[i]);
  }
  for (auto& a : out)
    if (a.used > 0)
      for (int i = 0; i < 4; ++i) a.std[i] = a.used > 1 ? std::sqrt(a.std[i] / (a.used - 1)) : 0.0;
  return out;
}

/// Boundary data of one (test, grid point, realization) cell.
class BoundaryFactory {
 public:
  explicit BoundaryFactory(const Dataset& d) : d_(d) {}

  const std::vector<Vec2>& exact(LoadCase t) {
    std::lock_guard lock(mu_);
    auto& slot = exact_[static_cast<int>(t)];
    if (!slot) slot = extract_boundary(d_.dns_field(t), *d_.mve);
    return *slot;
  }

  std::vector<Vec2> make(LoadCase t, double value, std::uint64_t seed) {
    const auto& ex = exact(t);
    switch (d_.config.campaign.kind) {
      case PerturbationKind::none:
        return ex;
      case PerturbationKind::noise:
        return perturb_boundary(ex, max_displacement(ex), value, seed);
      case PerturbationKind::smooth: {
        std::lock_guard lock(mu_);
        auto key = std::make_pair(static_cast<int>(t), value);
        auto it = smooth_.find(key);
        if (it == smooth_.end())
          it = smooth_.emplace(key, smooth_boundary(d_.dns_field(t), *d_.mve, value, d_.config.geometry.diameter,
                                                    d_.fov.pixel_size)).first;
        return it->second;
      }
    }
    return ex;
  }

 private:
  const Dataset& d_;
  std::mutex mu_;
  std::array<std::optional<std::vector<Vec2>>, 2> exact_;
  std::map<std::pair<int, double>, std::vector<Vec2>> smooth_;
};

/// Seed of one realization; shared across tests, grid points and methods so
/// that comparisons are paired.
inline std::uint64_t realization_seed(std::uint64_t master, int realization) {
  return derive_seed(master, "realization", static_cast<std::uint64_t>(realization));
}

/// Every (test, grid point, realization) cell runs every configured method.
/// `on_run` (optional) sees each finished run, e.g. to persist chains.
inline ExperimentReport run_campaign(
    const Dataset& d, int jobs = 1,
    const std::function<void(const CampaignRow&, const RunResult&)>& on_run = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cc = d.config.campaign;
  if (cc.realizations < 1) throw std::invalid_argument("run_campaign: realizations must be >= 1");
  struct Cell {
    LoadCase test;
    int grid;
    int realization;
  };
  std::vector<Cell> cells;
  for (LoadCase t : cc.tests)
    for (int g = 0; g < static_cast<int>(cc.grid.size()); ++g)
      for (int r = 0; r < cc.realizations; ++r) cells.push_back({t, g, r});
  const int nm = static_cast<int>(cc.methods.size());
  std::vector<CampaignRow> rows(cells.size() * nm);
  BoundaryFactory boundaries(d);
  std::mutex report_mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      const Cell& cell = cells[k];
      const double value = cc.grid[cell.grid];
      const std::uint64_t rs = realization_seed(d.config.seed, cell.realization);
      const auto& exact = boundaries.exact(cell.test);
      std::vector<Vec2> bc;
      std::optional<ImagePair> images;
      std::string setup_error;
      try {
        bc = boundaries.make(cell.test, value,
                             derive_seed(rs, "boundary-" + to_string(cell.test), static_cast<std::uint64_t>(cell.grid)));
        images = noisy_pair(d, cell.test, derive_seed(rs, "images-" + to_string(cell.test)));
      } catch (const std::exception& e) {
        setup_error = e.what();
      }
      for (int mi = 0; mi < nm; ++mi) {
        CampaignRow row;
        row.test = cell.test;
        row.grid_value = value;
        row.realization = cell.realization;
        row.method = cc.methods[mi];
        RunResult res;
        if (!setup_error.empty()) {
          row.status = "failed: " + setup_error;
        } else {
          try {
            res = run_method(row.method, d, *images, bc, derive_seed(rs, "method-" + to_string(row.method)));
            row.status = res.status;
          } catch (const std::exception& e) {
            row.status = std::string("failed: ") + e.what();
          }
        }
        if (usable(row)) {
          for (int i = 0; i < 4; ++i) row.params[i] = res.estimate.values[i];
          const auto err = parameter_error({row.params.begin(), row.params.end()},
                                           {d.config.material.values.begin(), d.config.material.values.end()});
          std::copy(err.begin(), err.end(), row.rel_error.begin());
          row.bc_error = boundary_error(res.boundary, exact);
          row.iterations = res.iterations;
          row.acceptance = res.acceptance;
          row.seconds = res.seconds;
        } else {
          row.params.fill(std::numeric_limits<double>::quiet_NaN());
          row.rel_error.fill(std::numeric_limits<double>::quiet_NaN());
          row.bc_error = std::numeric_limits<double>::quiet_NaN();
          row.acceptance = std::numeric_limits<double>::quiet_NaN();
        }
        for (char& ch : row.status)
          if (ch == ',' || ch == '\n') ch = ';';
        rows[k * nm + mi] = row;
        if (on_run) {
          std::lock_guard lock(report_mu);
          on_run(row, res);
        }
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  ExperimentReport rep;
  rep.rows = std::move(rows);
  rep.aggregates = aggregate(rep.rows);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline void write_rows(std::ostream& os, const std::vector<CampaignRow>& rows) {
  os << "test,grid_value,realization,method,status,G1,K1,G2,K2,err_G1,err_K1,err_G2,err_K2,bc_error,iterations,"
        "acceptance\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : rows) {
    os << to_string(r.test) << ',' << r.grid_value << ',' << r.realization << ',' << to_string(r.method) << ','
       << r.status;
    for (double v : r.params) os << ',' << v;
    for (double v : r.rel_error) os << ',' << v;
    os << ',' << r.bc_error << ',' << r.iterations << ',' << r.acceptance << '\n';
  }
}

inline void write_aggregates(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "test,grid_value,method,used,failed";
  for (const char* n : kMaterialNames) os << ",mean_" << n;
  for (const char* n : kMaterialNames) os << ",std_" << n;
  for (const char* n : kMaterialNames) os << ",mean_abs_err_" << n;
  os << ",mean_bc_error\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& a : rows) {
    os << to_string(a.test) << ',' << a.grid_value << ',' << to_string(a.method) << ',' << a.used << ',' << a.failed;
    for (double v : a.mean) os << ',' << v;
    for (double v : a.std) os << ',' << v;
    for (double v : a.mean_abs_error) os << ',' << v;
    os << ',' << a.mean_bc_error << '\n';
  }
}

}  // namespace bayesdic

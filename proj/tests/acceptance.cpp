// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Pass criterion numbers as arguments to run a subset.

#include "bayesdic/app.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

using namespace bayesdic;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

// The free moduli: everything except the normalization modulus.
constexpr std::array<int, 3> kFree{0, 2, 3};

const Dataset& desk() {
  static const Dataset d = prepare_dataset(ExperimentConfig{});
  return d;
}

std::uint64_t images_seed(const ExperimentConfig& c, LoadCase t, int realization = 0) {
  return derive_seed(realization_seed(c.seed, realization), "images-" + to_string(t));
}

// ---------------------------------------------------------------------------

Outcome constitutive() {
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> n(0.0, 0.3);
  const std::array<std::pair<double, double>, 2> phases{{{1.0, 3.0}, {4.0, 12.0}}};
  double worst_p = 0.0, worst_a = 0.0, worst_w = 0.0, worst_q = 0.0;
  for (int s = 0; s < 1000; ++s) {
    Mat2 F;
    do F << 1.0 + n(rng), n(rng), n(rng), 1.0 + n(rng);
    while (F.determinant() < 0.3);
    const auto [G, K] = phases[s % 2];
    const Mat2 P = neo_hookean::first_pk_stress(F, G, K);
    const auto A = neo_hookean::material_tangent(F, G, K);

    Mat2 Pfd;
    Eigen::Matrix4d Afd;
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        Mat2 Fp = F, Fm = F;
        Fp(i, j) += h;
        Fm(i, j) -= h;
        Pfd(i, j) = (neo_hookean::energy_density(Fp, G, K) - neo_hookean::energy_density(Fm, G, K)) / (2 * h);
        const Mat2 dP = (neo_hookean::first_pk_stress(Fp, G, K) - neo_hookean::first_pk_stress(Fm, G, K)) / (2 * h);
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l) Afd(2 * k + l, 2 * i + j) = dP(k, l);
      }
    worst_p = std::max(worst_p, (Pfd - P).norm() / P.norm());
    worst_a = std::max(worst_a, rel_frobenius(A, Afd));

    const double th = std::uniform_real_distribution<double>(0.0, 2 * M_PI)(rng);
    Mat2 Q;
    Q << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    const double W = neo_hookean::energy_density(F, G, K);
    worst_w = std::max(worst_w, std::abs(neo_hookean::energy_density(Q * F, G, K) - W) / std::max(1.0, std::abs(W)));
    worst_q = std::max(worst_q, (neo_hookean::first_pk_stress(Q * F, G, K) - Q * P).norm() / P.norm());
  }
  return {worst_p <= 1e-6 && worst_a <= 1e-5 && worst_w <= 1e-10 && worst_q <= 1e-10,
          fmt("P vs dW/dF %.2e, tangent vs FD %.2e, W(QF) %.2e, P(QF) %.2e", worst_p, worst_a, worst_w, worst_q)};
}

Outcome patch_test() {
  const Dataset& d = desk();
  MaterialParams homog;
  homog.values = {1.0, 3.0, 1.0, 3.0};
  SolverOptions o;
  o.newton_tol = 1e-12;
  double worst = 0.0;
  for (LoadCase t : {LoadCase::tension, LoadCase::shear}) {
    const Mat2 F = macro_gradient(t);
    const auto exact = affine_field(d.mve, F);
    std::vector<Vec2> bc;
    for (int n : d.mve->boundary_nodes) bc.push_back(exact[n]);
    const auto u = solve(d.mve, homog, boundary_dirichlet(*d.mve, bc), o);
    double err = 0.0, ref = 0.0;
    for (std::size_t n = 0; n < d.mve->node_count(); ++n) {
      err += (u[n] - exact[n]).squaredNorm();
      ref += exact[n].squaredNorm();
    }
    worst = std::max(worst, std::sqrt(err / ref));
  }
  return {worst <= 1e-8, fmt("max relative deviation from affine field %.2e (both load cases)", worst)};
}

Outcome scale_invariance() {
  const Dataset& d = desk();
  const auto& c = d.config;
  double worst_u = 0.0, worst_ll = 0.0;
  for (LoadCase t : {LoadCase::tension, LoadCase::shear}) {
    const auto images = noisy_pair(d, t, images_seed(c, t));
    ForwardModel model(d.mve, images.g, d.roi, c.solver);
    const auto bc = extract_boundary(d.dns_field(t), *d.mve);
    const auto f = ForwardModel::roi_samples(images.f, model.plan());
    const auto u0 = model.solve(c.material, bc);
    const double ll0 = log_likelihood(residual_norm(f, model.warp(u0)), c.imaging.sigma_eta);
    for (double s : {0.5, 2.0}) {
      MaterialParams m = c.material;
      for (double& v : m.values) v *= s;
      const auto u = model.solve(m, bc);
      double diff = 0.0, ref = 0.0;
      for (std::size_t n = 0; n < d.mve->node_count(); ++n) {
        diff += (u[n] - u0[n]).squaredNorm();
        ref += u0[n].squaredNorm();
      }
      worst_u = std::max(worst_u, std::sqrt(diff / ref));
      const double ll = log_likelihood(residual_norm(f, model.warp(u)), c.imaging.sigma_eta);
      worst_ll = std::max(worst_ll, std::abs(ll - ll0));
    }
  }
  return {worst_u < 1e-7 && worst_ll < 1e-4,
          fmt("field change %.2e, log-likelihood change %.2e (c = 0.5, 2; both load cases)", worst_u, worst_ll)};
}

Outcome clean_recovery() {
  const Dataset& d = desk();
  const auto& c = d.config;
  bool pass = false;
  std::string detail;
  for (LoadCase t : {LoadCase::tension, LoadCase::shear}) {
    const auto images = noisy_pair(d, t, images_seed(c, t));
    const auto bc = extract_boundary(d.dns_field(t), *d.mve);
    const auto gn = run_method(Method::idic, d, images, bc, 1);
    const auto mh = run_method(Method::mha, d, images, bc, derive_seed(c.seed, "acceptance-mha"));
    double e_id = 0.0, e_mh = 0.0;
    for (int i : kFree) {
      e_id = std::max(e_id, std::abs(gn.estimate.values[i] / c.material.values[i] - 1.0));
      e_mh = std::max(e_mh, std::abs(mh.estimate.values[i] / gn.estimate.values[i] - 1.0));
    }
    // Shear is reported only: its bulk sensitivity is too weak at 256 px.
    if (t == LoadCase::tension) pass = gn.status == "ok" && e_id <= 0.02 && e_mh <= 0.02;
    detail += fmt("%s: IDIC (%.4f %.4f %.4f) max err %.2f%%, MHA modes (%.4f %.4f %.4f) max dev %.2f%% acc %.2f%s; ",
                  to_string(t).c_str(), gn.estimate.values[0], gn.estimate.values[2], gn.estimate.values[3],
                  100 * e_id, mh.estimate.values[0], mh.estimate.values[2], mh.estimate.values[3], 100 * e_mh,
                  mh.acceptance, t == LoadCase::shear ? " (not scored)" : "");
  }
  return {pass, detail};
}

Outcome degradation_trend() {
  bool pass = true;
  std::string detail;
  for (auto [kind, level] : {std::pair{PerturbationKind::smooth, 5.0}, std::pair{PerturbationKind::noise, 0.1}}) {
    Dataset d = desk();
    d.config.campaign.kind = kind;
    d.config.campaign.grid = {0.0, level};
    d.config.campaign.tests = {LoadCase::tension, LoadCase::shear};
    d.config.campaign.methods = {Method::idic};
    d.config.campaign.realizations = 5;
    const auto rep = run_campaign(d, static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
    auto row = [&](LoadCase t, double g) -> const AggregateRow& {
      for (const auto& a : rep.aggregates)
        if (a.test == t && a.grid_value == g) return a;
      throw std::logic_error("missing aggregate");
    };
    std::array<double, 2> growth{};
    int worse = 0;
    for (LoadCase t : {LoadCase::tension, LoadCase::shear}) {
      const auto& clean = row(t, 0.0);
      const auto& pert = row(t, level);
      if (clean.failed || pert.failed) pass = false;
      for (int i : kFree) {
        growth[static_cast<int>(t)] += pert.mean_abs_error[i] - clean.mean_abs_error[i];
        if (t == LoadCase::tension && pert.mean_abs_error[i] > clean.mean_abs_error[i]) ++worse;
      }
    }
    pass = pass && worse >= 2 && growth[1] > growth[0];
    detail += fmt("%s %.2g: tension worse in %d/3, error growth tension %.4f shear %.4f; ",
                  kind == PerturbationKind::smooth ? "smooth" : "noise", level, worse, growth[0], growth[1]);
  }
  return {pass, detail};
}

Outcome sampler_correctness() {
  // 1D
  const LogTarget g1 = [](const Eigen::VectorXd& x) { return -0.5 * (x[0] - 2.0) * (x[0] - 2.0) / 0.25; };
  ProposalSettings p1;
  p1.sigma_mat = {0.05};
  p1.seed = 11;
  double rate1 = 0.0;
  p1 = tune_acceptance(g1, Eigen::VectorXd::Constant(1, 2.0), p1, 2000, 12, 0.2, 0.4, &rate1);
  const Chain c1 = run_mha(g1, Eigen::VectorXd::Constant(1, 0.0), p1, 200000, 5000);
  const Eigen::VectorXd s1 = c1.post_burn_in().col(0);
  const double m1 = s1.mean();
  const double v1 = (s1.array() - m1).square().sum() / (s1.size() - 1);

  // 3D with correlated covariance
  Eigen::Matrix3d cov;
  cov << 1.0, 0.5, 0.2, 0.5, 2.0, 0.3, 0.2, 0.3, 0.5;
  const Eigen::Vector3d mu(0.5, -1.0, 2.0);
  const Eigen::Matrix3d prec = cov.inverse();
  const LogTarget g3 = [&](const Eigen::VectorXd& x) {
    const Eigen::Vector3d r = x - mu;
    return -0.5 * r.dot(prec * r);
  };
  ProposalSettings p3;
  p3.sigma_mat = {0.05, 0.05, 0.05};
  p3.seed = 12;
  double rate3 = 0.0;
  p3 = tune_acceptance(g3, mu, p3, 2000, 12, 0.2, 0.4, &rate3);
  const Chain c3 = run_mha(g3, Eigen::VectorXd::Zero(3), p3, 200000, 5000);
  const Eigen::MatrixXd s3 = c3.post_burn_in();
  const Eigen::RowVectorXd m3 = s3.colwise().mean();
  const Eigen::MatrixXd centered = s3.rowwise() - m3;
  const Eigen::MatrixXd cov3 = centered.transpose() * centered / double(s3.rows() - 1);

  const double dm1 = std::abs(m1 - 2.0), dv1 = std::abs(v1 - 0.25) / 0.25;
  const double dm3 = (m3.transpose() - mu).cwiseAbs().maxCoeff(), dc3 = rel_frobenius(cov3, cov);
  const bool tuned = rate1 >= 0.2 && rate1 <= 0.4 && rate3 >= 0.2 && rate3 <= 0.4;
  return {dm1 <= 0.05 && dv1 <= 0.1 && dm3 <= 0.05 && dc3 <= 0.1 && tuned,
          fmt("1D mean err %.3f var err %.1f%%; 3D mean err %.3f cov err %.1f%%; tuned acceptance %.2f / %.2f", dm1,
              100 * dv1, dm3, 100 * dc3, rate1, rate3)};
}

Outcome relaxed_consistency() {
  // Relaxed runs start from the reference moduli with a half-size material
  // step and a long chain, as in the boundary-relaxation study.
  Dataset d = desk();
  auto& c = d.config;
  c.identification.initial_factor = 1.0;
  c.mha.step_fraction = 0.005;
  c.mha.steps = 24000;
  c.mha.burn_in = 22000;
  c.mha.stride = 1;
  const LoadCase t = LoadCase::tension;
  const auto exact = extract_boundary(d.dns_field(t), *d.mve);
  const std::uint64_t rs = realization_seed(c.seed, 0);
  const auto noisy = perturb_boundary(exact, max_displacement(exact), 0.04, derive_seed(rs, "boundary-tension"));
  const auto images = noisy_pair(d, t, images_seed(c, t));

  const auto fixed = run_method(Method::idic, d, images, noisy, derive_seed(rs, "method-idic"));
  const auto be = run_method(Method::be_idic, d, images, noisy, derive_seed(rs, "method-be-idic"));
  const auto mh = run_method(Method::mha_relaxed, d, images, noisy, derive_seed(rs, "method-mha-relaxed"));

  auto mat_error = [&](const MaterialParams& m) {
    double s = 0.0;
    for (int i : kFree) s += std::pow(m.values[i] / c.material.values[i] - 1.0, 2);
    return std::sqrt(s);
  };
  const double e_fixed = mat_error(fixed.estimate), e_be = mat_error(be.estimate);
  const bool a = e_be < e_fixed;
  bool b = true;
  std::string inside;
  for (int k = 0; k < 3; ++k) {
    const auto& p = mh.summary->params[k];
    const double v = be.estimate.values[kFree[k]];
    const bool in = v >= p.ci99_low && v <= p.ci99_high;
    b = b && in;
    inside += fmt("%s %.4f in [%.4f, %.4f] %s; ", p.name.c_str(), v, p.ci99_low, p.ci99_high, in ? "yes" : "no");
  }
  return {a && b, fmt("(a) material error BE-IDIC %.4f vs IDIC %.4f %s; (b) ", e_be, e_fixed, a ? "ok" : "FAIL") +
                      inside + fmt("MHA acceptance %.3f, %d kinematic DOFs", mh.acceptance, 2 * int(exact.size()))};
}

Outcome nonnormalized() {
  Dataset d = desk();
  d.config.mha.flat_prior = true;
  const LoadCase t = LoadCase::tension;
  const auto images = noisy_pair(d, t, images_seed(d.config, t));
  const auto bc = extract_boundary(d.dns_field(t), *d.mve);
  const auto r = run_method(Method::mha_nonnorm, d, images, bc, derive_seed(d.config.seed, "acceptance-nonnorm"));
  const Chain& raw = *r.raw_chain;

  auto ratios = [](const Chain& c) {
    Chain out;
    out.names = {"G2/G1", "K2/K1"};
    out.states.resize(c.size(), 2);
    out.states.col(0) = c.states.col(2).array() / c.states.col(0).array();
    out.states.col(1) = c.states.col(3).array() / c.states.col(1).array();
    out.log_post = c.log_post;
    out.accepted = c.accepted;
    out.burn_in = c.burn_in;
    return out;
  };
  const Chain base = ratios(raw);
  const auto s = summarize(base);
  double worst = 0.0;
  for (int p = 0; p < 4; ++p) {
    const Chain n = ratios(normalize_chain(raw, p, d.config.material.values[p]));
    worst = std::max(worst, ((n.states - base.states).array() / base.states.array()).abs().maxCoeff());
    const auto sn = summarize(n);
    for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(sn.params[k].mode / s.params[k].mode - 1.0));
  }
  const double e0 = std::abs(s.params[0].mode / 4.0 - 1.0), e1 = std::abs(s.params[1].mode / 4.0 - 1.0);
  return {e0 <= 0.05 && e1 <= 0.05 && worst <= 1e-12,
          fmt("ratio modes G2/G1 %.4f K2/K1 %.4f, pivot spread %.1e, acceptance %.2f", s.params[0].mode,
              s.params[1].mode, worst, r.acceptance)};
}

Outcome reduction_error() {
  const Dataset& d = desk();
  const auto exact = extract_boundary(d.dns_field(LoadCase::tension), *d.mve);
  std::map<int, double> e;
  for (int s : {8, 4, 2, 1}) {
    const auto [red, R] = reduce_boundary(exact, *d.mve, s);
    e[s] = boundary_error(R.expand(red), exact);
  }
  return {e[4] <= 0.02 && e[8] > e[4] && e[4] > e[2] && e[2] >= e[1],
          fmt("stride 8 %.2e, 4 %.2e, 2 %.2e, 1 %.2e", e[8], e[4], e[2], e[1])};
}

Outcome imaging_exactness() {
  SpeckleSpec spec;
  const Image f = generate_speckle(spec, 96, 96);
  auto shift = [&](Vec2 v) {
    return PixelDisplacement{f.geometry, std::vector<Vec2>(f.geometry.size(), v), PixelMask(f.geometry.size(), 1)};
  };
  const auto id = warp_image(f, shift(Vec2::Zero()));
  bool identity = true;
  for (std::size_t k = 0; k < f.values.size(); ++k)
    if (id.valid[k] && id.image.values[k] != f.values[k]) identity = false;

  const auto sh = warp_image(f, shift(Vec2{4.0, -3.0}));
  bool integer = true;
  int valid = 0;
  for (int j = 0; j < f.height(); ++j)
    for (int i = 0; i < f.width(); ++i) {
      const auto k = f.geometry.index(i, j);
      if (!sh.valid[k]) continue;
      ++valid;
      if (sh.image.values[k] != f(i + 4, j - 3)) integer = false;
    }

  Image poly(f.geometry), flat(f.geometry, 93.5);
  auto p = [](double x, double y) { return 1e-3 * x * x * x - 2e-3 * x * y * y + 0.05 * x * y - 0.7 * y + 12.0; };
  for (int j = 0; j < f.height(); ++j)
    for (int i = 0; i < f.width(); ++i) poly(i, j) = p(i, j);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(3.0, 90.0);
  double cubic = 0.0, constant = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const double x = u(rng), y = u(rng);
    bool ok = false;
    cubic = std::max(cubic, std::abs(sample_bicubic(poly, x, y, ok) - p(x, y)));
    constant = std::max(constant, std::abs(sample_bicubic(flat, x, y, ok) - 93.5));
  }
  return {identity && integer && valid > 0 && cubic <= 1e-9 && constant <= 1e-12,
          fmt("identity %s, integer shift %s on %d px, cubic %.1e, constant %.1e", identity ? "exact" : "differs",
              integer ? "exact" : "differs", valid, cubic, constant)};
}

Outcome reproducibility() {
  // Small campaign run twice: once from its config, once from the manifest it
  // wrote, with a different thread count.
  ExperimentConfig c;
  c.geometry.width = c.geometry.height = 4.0;
  c.geometry.inclusions = 2;
  c.geometry.mve_window = Rect{1, 1, 3, 3};
  c.geometry.dns_edge = c.geometry.mve_edge = 0.25;
  c.geometry.mve_boundary_nodes = 64;
  c.imaging.fov_pixels = 64;
  c.imaging.fov_margin = 0.5;
  c.solver.n_increments = 2;
  c.mha.steps = 300;
  c.mha.burn_in = 150;
  c.campaign.methods = {Method::idic, Method::mha};
  c.campaign.kind = PerturbationKind::noise;
  c.campaign.grid = {0.0, 0.1};
  c.campaign.realizations = 2;
  const fs::path root = fs::temp_directory_path() / "bayesdic-acceptance";
  fs::remove_all(root);
  const auto m1 = app::campaign(resolve_config(to_json(c), false), std::nullopt, 4, true, root / "a");
  const Json manifest = app::read_json_file(root / "a" / "manifest.json");
  const auto m2 = app::campaign(resolve_config(manifest.at("config"), false), std::nullopt, 1, true, root / "b");
  const bool same = m1.outputs == m2.outputs && !m1.outputs.empty();
  int differing = 0;
  for (const auto& [k, v] : m1.outputs)
    if (!m2.outputs.count(k) || m2.outputs.at(k) != v) ++differing;
  return {same, fmt("%zu output digests compared, %d differ", m1.outputs.size(), differing)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"constitutive verification", constitutive},
      {"patch test", patch_test},
      {"Dirichlet scale invariance", scale_invariance},
      {"clean-data recovery", clean_recovery},
      {"boundary-error degradation trend", degradation_trend},
      {"MHA sampler correctness", sampler_correctness},
      {"BE-IDIC vs relaxed-BC MHA consistency", relaxed_consistency},
      {"non-normalized identification", nonnormalized},
      {"boundary-reduction interpolation error", reduction_error},
      {"imaging exactness", imaging_exactness},
      {"reproducibility from manifest", reproducibility},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    app::Stopwatch sw;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << criteria[k].first << ": " << o.detail
              << fmt(" (%.1f s)", sw.seconds()) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

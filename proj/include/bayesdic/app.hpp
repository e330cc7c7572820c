#pragma once

// Command implementations behind the CLI: dataset preparation and loading,
// single identifications, campaigns and chain post-processing. Every command
// writes a manifest.json with the resolved configuration, output digests and
// timings. Digested files never contain timings, so reruns reproduce them.

#include "bayesdic/config.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#ifndef BAYESDIC_VERSION
#define BAYESDIC_VERSION "0.1.0"
#endif

namespace bayesdic::app {

namespace fs = std::filesystem;

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256: cannot initialize digest");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

struct Manifest {
  std::string command;
  ExperimentConfig config;
  Json extra = Json::object();              // command-specific settings
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path relative to the output directory -> sha256
  std::map<std::string, double> timings;       // seconds

  Json to_json() const {
    Json j;
    j["tool"] = "bayesdic";
    j["version"] = BAYESDIC_VERSION;
    j["command"] = command;
    j["seed"] = config.seed;
    j["config"] = bayesdic::to_json(config);
    j["settings"] = extra;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["timings"] = timings;
    return j;
  }
};

/// Digests every regular file under `dir` except manifest.json.
inline std::map<std::string, std::string> digest_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    out[rel] = sha256_file(e.path());
  }
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

template <class Fn>
void write_with(const fs::path& path, Fn&& fn, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  fn(os);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline Manifest finish_manifest(Manifest m, const fs::path& out, const Stopwatch& total) {
  m.outputs = digest_tree(out);
  m.timings["total"] = total.seconds();
  write_text(out / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

inline Json microstructure_json(const Microstructure& m) {
  Json inc = Json::array();
  for (const auto& c : m.inclusions) inc.push_back({c.center.x(), c.center.y(), c.diameter});
  return {{"domain", {m.domain.x0, m.domain.y0, m.domain.x1, m.domain.y1}},
          {"min_gap", m.min_gap},
          {"seed", m.seed},
          {"inclusions", inc}};
}

inline Microstructure microstructure_from_json(const Json& j) {
  try {
    Microstructure m;
    const auto d = j.at("domain").get<std::vector<double>>();
    if (d.size() != 4) throw ParseError("microstructure: domain needs 4 numbers");
    m.domain = Rect{d[0], d[1], d[2], d[3]};
    m.min_gap = j.at("min_gap").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("inclusions")) {
      const auto v = c.get<std::vector<double>>();
      if (v.size() != 3) throw ParseError("microstructure: inclusion needs [x, y, diameter]");
      m.inclusions.push_back(Inclusion{Vec2{v[0], v[1]}, v[2]});
    }
    return m;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("microstructure: ") + e.what());
  }
}

inline Json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), p.string());
}

// ---------------------------------------------------------------------------
// prepare

/// Synthesizes the dataset and writes it to `out`: the resolved config, the
/// microstructure, both meshes, the DNS fields of both tests and the clean
/// reference and deformed images (raw float64 plus PGM previews).
inline Manifest prepare(const ExperimentConfig& c, const fs::path& out) {
  Stopwatch total;
  fs::create_directories(out);
  Manifest man;
  man.command = "prepare";
  man.config = c;
  Stopwatch sw;
  const Dataset d = prepare_dataset(c);
  man.timings["synthesis"] = sw.seconds();
  write_text(out / "config.json", to_json(c).dump(2) + "\n");
  write_text(out / "microstructure.json", microstructure_json(d.micro).dump(2) + "\n");
  save_mesh((out / "dns_mesh.txt").string(), *d.dns);
  save_mesh((out / "mve_mesh.txt").string(), *d.mve);
  write_with(out / "u_tension.txt", [&](std::ostream& os) { write_displacement(os, d.u_tension); });
  write_with(out / "u_shear.txt", [&](std::ostream& os) { write_displacement(os, d.u_shear); });
  const std::pair<const char*, const Image*> images[] = {
      {"reference", &d.reference}, {"deformed_tension", &d.deformed_tension}, {"deformed_shear", &d.deformed_shear}};
  for (const auto& [name, img] : images) {
    write_with(out / (std::string(name) + ".raw"), [&](std::ostream& os) { write_raw(os, *img); }, true);
    write_with(out / (std::string(name) + ".pgm"), [&](std::ostream& os) { write_pgm(os, *img); }, true);
  }
  man.extra = {{"dns_nodes", d.dns->node_count()},
               {"mve_nodes", d.mve->node_count()},
               {"mve_boundary_nodes", d.mve->boundary_nodes.size()},
               {"roi_pixels", std::count(d.roi.begin(), d.roi.end(), 1)}};
  return finish_manifest(std::move(man), out, total);
}

/// Reads a prepared dataset back. The speckle field, FOV and ROI are rebuilt
/// from the stored configuration; everything else is read from disk.
inline Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.config = resolve_config(read_json_file(dir / "config.json"), false);
  const auto& c = d.config;
  d.micro = microstructure_from_json(read_json_file(dir / "microstructure.json"));
  d.dns = std::make_shared<const Mesh>(load_mesh((dir / "dns_mesh.txt").string()));
  d.mve = std::make_shared<const Mesh>(load_mesh((dir / "mve_mesh.txt").string()));
  auto field = [&](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw std::runtime_error("cannot read " + (dir / name).string());
    return read_displacement(in, d.dns);
  };
  d.u_tension = field("u_tension.txt");
  d.u_shear = field("u_shear.txt");
  d.fov = ImageGeometry::covering(fov_window(c), c.imaging.fov_pixels);
  d.roi = window_mask(d.fov, c.geometry.mve_window);
  d.speckle = std::make_shared<const SpeckleField>(make_speckle(c));
  auto image = [&](const char* name) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + (dir / name).string());
    return read_raw(in, &d.fov);
  };
  d.reference = image("reference.raw");
  d.deformed_tension = image("deformed_tension.raw");
  d.deformed_shear = image("deformed_shear.raw");
  return d;
}

/// Sections that define a dataset; a run against a stored dataset must agree
/// on them. The seed is excluded: it only drives the noise realizations there.
inline void check_compatible(const ExperimentConfig& dataset, const ExperimentConfig& run) {
  const Json a = to_json(dataset), b = to_json(run);
  for (const char* s : {"geometry", "material", "solver", "imaging"})
    if (a[s] != b[s])
      throw ConfigError(std::string("config section '") + s + "' differs from the one the dataset was prepared with");
}

/// Uses the stored dataset when given, otherwise synthesizes one from `c`.
/// The run's configuration replaces the dataset's after the compatibility check.
inline Dataset obtain_dataset(const ExperimentConfig& c, const std::optional<fs::path>& dir, Manifest& man) {
  Stopwatch sw;
  Dataset d;
  if (dir) {
    d = load_dataset(*dir);
    check_compatible(d.config, c);
    man.inputs["dataset/manifest.json"] =
        fs::exists(*dir / "manifest.json") ? sha256_file(*dir / "manifest.json") : std::string("missing");
    d.config = c;
  } else {
    d = prepare_dataset(c);
  }
  man.timings["dataset"] = sw.seconds();
  return d;
}

// ---------------------------------------------------------------------------
// identify

struct IdentifyOptions {
  Method method = Method::idic;
  LoadCase test = LoadCase::tension;
  double level = 0.0;   // perturbation level (campaign.perturbation selects the kind)
  int realization = 0;
};

inline Json summary_json(const PosteriorSummary& s) {
  Json j = Json::object();
  for (const auto& p : s.params)
    j[p.name] = {{"mean", p.mean},
                 {"std", p.std},
                 {"mode", p.mode},
                 {"ci95", {p.ci95_low, p.ci95_high}},
                 {"ci99", {p.ci99_low, p.ci99_high}}};
  return j;
}

/// One identification on the noise realization a campaign would use for the
/// same (test, level, realization) cell.
inline Manifest identify(const ExperimentConfig& c, const std::optional<fs::path>& dataset_dir,
                         const IdentifyOptions& o, const fs::path& out) {
  Stopwatch total;
  fs::create_directories(out);
  Manifest man;
  man.command = "identify";
  man.config = c;
  man.extra = {{"method", to_string(o.method)},
               {"test", to_string(o.test)},
               {"perturbation", to_string(c.campaign.kind)},
               {"level", o.level},
               {"realization", o.realization}};
  const Dataset d = obtain_dataset(c, dataset_dir, man);

  BoundaryFactory boundaries(d);
  const std::uint64_t rs = realization_seed(c.seed, o.realization);
  const auto& exact = boundaries.exact(o.test);
  int grid_index = 0;
  for (std::size_t g = 0; g < c.campaign.grid.size(); ++g)
    if (c.campaign.grid[g] == o.level) grid_index = static_cast<int>(g);
  const auto bc = boundaries.make(o.test, o.level,
                                  derive_seed(rs, "boundary-" + to_string(o.test), static_cast<std::uint64_t>(grid_index)));
  const auto images = noisy_pair(d, o.test, derive_seed(rs, "images-" + to_string(o.test)));

  Stopwatch sw;
  const RunResult r = run_method(o.method, d, images, bc, derive_seed(rs, "method-" + to_string(o.method)));
  man.timings["identification"] = sw.seconds();

  Json est;
  est["method"] = to_string(o.method);
  est["test"] = to_string(o.test);
  est["status"] = r.status;
  std::vector<double> vals(r.estimate.values.begin(), r.estimate.values.end());
  const auto err = parameter_error(vals, {c.material.values.begin(), c.material.values.end()});
  for (int i = 0; i < 4; ++i) {
    est["params"][kMaterialNames[i]] = vals[i];
    est["rel_error"][kMaterialNames[i]] = err[i];
  }
  est["bc_error"] = boundary_error(r.boundary, exact);
  est["input_bc_error"] = boundary_error(bc, exact);
  est["iterations"] = r.iterations;
  if (r.chain) {
    est["acceptance"] = r.acceptance;
    est["posterior"] = summary_json(*r.summary);
  }
  write_text(out / "estimate.json", est.dump(2) + "\n");

  write_with(out / "boundary.txt", [&](std::ostream& os) {
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t k = 0; k < r.boundary.size(); ++k)
      os << d.mve->boundary_nodes[k] << ' ' << r.boundary[k].x() << ' ' << r.boundary[k].y() << '\n';
  });
  if (r.gauss_newton) {
    const MaterialParams m0 = initial_material(c, false);
    const int n_mat = ParameterLayout(m0, 0).size();
    const ParameterLayout layout(m0, static_cast<int>(r.gauss_newton->params.size()) - n_mat);
    write_with(out / "trace.csv", [&](std::ostream& os) { write_trace(os, *r.gauss_newton, layout.names()); });
  }
  if (r.chain) {
    // The non-normalized method stores its raw chain; `post --pivot` reproduces
    // the normalized summary from it.
    const Chain& stored = r.raw_chain ? *r.raw_chain : *r.chain;
    write_with(out / "chain.csv", [&](std::ostream& os) { write_chain(os, stored); });
    write_with(out / "summary.txt", [&](std::ostream& os) { write_summary(os, *r.summary); });
    write_with(out / "kde.csv", [&](std::ostream& os) { write_kde(os, *r.summary); });
  }
  return finish_manifest(std::move(man), out, total);
}

// ---------------------------------------------------------------------------
// campaign

inline Manifest campaign(const ExperimentConfig& c, const std::optional<fs::path>& dataset_dir, int jobs,
                         bool save_chains, const fs::path& out) {
  Stopwatch total;
  fs::create_directories(out);
  Manifest man;
  man.command = "campaign";
  man.config = c;
  man.extra = {{"jobs", jobs}, {"save_chains", save_chains}};
  const Dataset d = obtain_dataset(c, dataset_dir, man);
  if (save_chains) fs::create_directories(out / "chains");
  std::map<std::string, double> method_seconds;
  Stopwatch sw;
  const ExperimentReport rep = run_campaign(d, jobs, [&](const CampaignRow& row, const RunResult& res) {
    method_seconds[to_string(row.method)] += row.seconds;
    if (!save_chains || !res.chain) return;
    std::ostringstream name;
    name << to_string(row.test) << "_g" << row.grid_value << "_r" << row.realization << "_" << to_string(row.method)
         << ".csv";
    write_with(out / "chains" / name.str(),
               [&](std::ostream& os) { write_chain(os, res.raw_chain ? *res.raw_chain : *res.chain); });
  });
  man.timings["campaign"] = sw.seconds();
  for (const auto& [m, s] : method_seconds) man.timings["cpu." + m] = s;
  write_text(out / "config.json", to_json(c).dump(2) + "\n");
  write_with(out / "runs.csv", [&](std::ostream& os) { write_rows(os, rep.rows); });
  write_with(out / "aggregates.csv", [&](std::ostream& os) { write_aggregates(os, rep.aggregates); });
  return finish_manifest(std::move(man), out, total);
}

// ---------------------------------------------------------------------------
// post

struct PostOptions {
  int burn_in = 0;
  std::string pivot;               // "" = no normalization
  std::optional<double> pivot_value;  // default: reference value of the pivot
  bool all_pivots = false;
  MaterialParams reference;        // reference moduli for default pivot values
};

/// Pools the post-burn-in states of several chains with identical columns.
inline Chain pool_chains(const std::vector<fs::path>& paths, int burn_in) {
  if (paths.empty()) throw std::invalid_argument("post: no chain files");
  std::vector<Chain> chains;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    chains.push_back(read_chain(in, burn_in, p.string()));
  }
  if (chains.size() == 1) return chains.front();
  Chain out;
  out.names = chains.front().names;
  Eigen::Index rows = 0;
  for (const auto& ch : chains) {
    if (ch.names != out.names) throw ParseError("post: chain files have different columns");
    rows += ch.size() - ch.burn_in;
  }
  out.states.resize(rows, static_cast<Eigen::Index>(out.names.size()));
  Eigen::Index r = 0;
  for (const auto& ch : chains)
    for (int i = ch.burn_in; i < ch.size(); ++i) {
      out.states.row(r++) = ch.states.row(i);
      out.log_post.push_back(ch.log_post[i]);
      out.accepted.push_back(ch.accepted[i]);
    }
  return out;
}

inline const char* kPlotScript = R"(# Renders kde.csv (param,x,density) with matplotlib, one panel per parameter.
import csv, sys
from collections import defaultdict
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

src = sys.argv[1] if len(sys.argv) > 1 else "kde.csv"
dst = sys.argv[2] if len(sys.argv) > 2 else "kde.png"
curves = defaultdict(lambda: ([], []))
with open(src) as fh:
    for row in csv.DictReader(fh):
        xs, ys = curves[row["param"]]
        xs.append(float(row["x"]))
        ys.append(float(row["density"]))
fig, axes = plt.subplots(1, len(curves), figsize=(3.2 * len(curves), 3), squeeze=False)
for ax, (name, (xs, ys)) in zip(axes[0], curves.items()):
    ax.plot(xs, ys)
    ax.set_title(name)
fig.tight_layout()
fig.savefig(dst, dpi=150)
)";

inline PosteriorSummary post_one(const Chain& chain, const std::string& pivot, const PostOptions& o) {
  if (pivot.empty()) return summarize(chain);
  const int p = material_index(pivot);
  const double value = o.pivot_value.value_or(o.reference.values[p]);
  return summarize(normalize_chain(chain, p, value));
}

inline Manifest post(const std::vector<fs::path>& chains, const PostOptions& o, const fs::path& out) {
  Stopwatch total;
  fs::create_directories(out);
  Manifest man;
  man.command = "post";
  man.config.material = o.reference;
  man.extra = {{"burn_in", o.burn_in}, {"pivot", o.pivot}, {"all_pivots", o.all_pivots}};
  if (o.pivot_value) man.extra["pivot_value"] = *o.pivot_value;
  for (const auto& p : chains) man.inputs[p.generic_string()] = sha256_file(p);
  const Chain chain = pool_chains(chains, o.burn_in);

  const PosteriorSummary s = post_one(chain, o.pivot, o);
  write_with(out / "summary.txt", [&](std::ostream& os) { write_summary(os, s); });
  write_with(out / "kde.csv", [&](std::ostream& os) { write_kde(os, s); });
  write_text(out / "plot_kde.py", kPlotScript);

  if (o.all_pivots) {
    write_with(out / "pivots.csv", [&](std::ostream& os) {
      os << "pivot,param,mode,mean,std,ci95_low,ci95_high,ci99_low,ci99_high\n"
         << std::setprecision(std::numeric_limits<double>::max_digits10);
      for (const char* pv : kMaterialNames) {
        PostOptions po = o;
        po.pivot_value.reset();  // each pivot sits at its own reference value
        const PosteriorSummary ps = post_one(chain, pv, po);
        write_with(out / (std::string("summary_") + pv + ".txt"), [&](std::ostream& s2) { write_summary(s2, ps); });
        for (const auto& p : ps.params)
          os << pv << ',' << p.name << ',' << p.mode << ',' << p.mean << ',' << p.std << ',' << p.ci95_low << ','
             << p.ci95_high << ',' << p.ci99_low << ',' << p.ci99_high << '\n';
      }
    });
  }
  return finish_manifest(std::move(man), out, total);
}

}  // namespace bayesdic::app

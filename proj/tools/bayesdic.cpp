// bayesdic: command-line front end.
//
//   bayesdic prepare  --config c.json --out data/
//   bayesdic identify --dataset data/ --method mha --test tension --out run/
//   bayesdic campaign --config c.json [--dataset data/] --jobs 4 --out camp/
//   bayesdic post run/chain.csv --burn-in 6000 --pivot K1 --out post/
//   bayesdic config   --config c.json          (prints the resolved config)
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage or configuration
// error, 3 numerical or data error.

#include "bayesdic/app.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using namespace bayesdic;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::string dataset;
  std::optional<std::uint64_t> seed;
  std::string fix;
  std::optional<int> steps, burn_in;
  std::vector<std::string> methods;
};

/// Config precedence: defaults < file (or the dataset's config) < BDIC_* env < flags.
ExperimentConfig resolve(const Common& o) {
  Json doc = Json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot open config file '" + o.config_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    doc = parse_json_text(ss.str(), o.config_path);
    // A manifest carries its resolved config under "config".
    if (doc.is_object() && doc.contains("tool") && doc.contains("config")) doc = doc["config"];
  } else if (!o.dataset.empty()) {
    doc = app::read_json_file(fs::path(o.dataset) / "config.json");
  }
  Json merged = to_json(resolve_config(doc));
  if (o.seed) merged["seed"] = *o.seed;
  if (!o.fix.empty()) merged["identification"]["fix"] = o.fix == "none" ? "" : o.fix;
  if (o.steps) merged["mha"]["steps"] = *o.steps;
  if (o.burn_in) merged["mha"]["burn_in"] = *o.burn_in;
  if (!o.methods.empty()) merged["campaign"]["methods"] = o.methods;
  return from_json(merged);
}

void add_common(CLI::App* cmd, Common& o, bool with_dataset) {
  cmd->add_option("--config", o.config_path, "JSON config (or a manifest.json to rerun)");
  if (with_dataset) cmd->add_option("--dataset", o.dataset, "prepared dataset directory");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--fix", o.fix, "modulus held at its reference value (G1, K1, G2, K2 or none)");
  cmd->add_option("--steps", o.steps, "MHA chain length");
  cmd->add_option("--burn-in", o.burn_in, "MHA burn-in");
}

std::optional<fs::path> dataset_dir(const Common& o) {
  if (o.dataset.empty()) return std::nullopt;
  return fs::path(o.dataset);
}

void report(const app::Manifest& m, const std::string& out) {
  std::cout << m.command << ": wrote " << m.outputs.size() << " files to " << out << " in " << std::fixed
            << std::setprecision(1) << m.timings.at("total") << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Bayesian and integrated DIC identification on virtual experiments"};
  cli.set_version_flag("--version", std::string(BAYESDIC_VERSION));
  cli.require_subcommand(1);

  Common common;
  std::string out;
  int jobs = 1;
  bool save_chains = false;
  std::string method = "idic", test = "tension", perturbation;
  double level = 0.0;
  int realization = 0;
  std::vector<std::string> chain_files;
  std::string pivot;
  std::optional<double> pivot_value;
  bool all_pivots = false;

  auto* prep = cli.add_subcommand("prepare", "synthesize the DNS dataset and images");
  add_common(prep, common, false);
  prep->add_option("--out", out, "output directory")->required();

  auto* ident = cli.add_subcommand("identify", "run one identification");
  add_common(ident, common, true);
  ident->add_option("--method", method, "idic, be-idic, mha, mha-relaxed or mha-nonnorm");
  ident->add_option("--test", test, "tension or shear");
  ident->add_option("--perturbation", perturbation, "none, smooth or noise (default: from config)");
  ident->add_option("--level", level, "perturbation level (smoothing epsilon or noise sigma)");
  ident->add_option("--realization", realization, "noise realization index");
  ident->add_option("--out", out, "output directory")->required();

  auto* camp = cli.add_subcommand("campaign", "Monte-Carlo campaign over the configured grid");
  add_common(camp, common, true);
  camp->add_option("--method", common.methods, "methods (overrides campaign.methods)");
  camp->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  camp->add_flag("--save-chains", save_chains, "store every MHA chain");
  camp->add_option("--out", out, "output directory")->required();

  auto* post = cli.add_subcommand("post", "summarize MHA chains");
  post->add_option("chains", chain_files, "chain CSV files (post-burn-in states are pooled)")->required();
  post->add_option("--config", common.config_path, "config providing the reference moduli");
  post->add_option("--burn-in", common.burn_in, "states discarded at the start of each chain");
  post->add_option("--pivot", pivot, "normalize by this modulus (G1, K1, G2, K2)");
  post->add_option("--pivot-value", pivot_value, "value of the pivot (default: its reference value)");
  post->add_flag("--all-pivots", all_pivots, "also summarize under every pivot");
  post->add_option("--out", out, "output directory")->required();

  auto* show = cli.add_subcommand("config", "print the resolved configuration");
  add_common(show, common, false);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*prep) {
      report(app::prepare(resolve(common), out), out);
    } else if (*ident) {
      Common c = common;
      ExperimentConfig cfg = resolve(c);
      if (!perturbation.empty()) {
        cfg.campaign.kind = parse_perturbation(perturbation);
        cfg = from_json(to_json(cfg));
      }
      app::IdentifyOptions o;
      o.method = parse_method(method);
      o.test = parse_load_case(test);
      o.level = level;
      o.realization = realization;
      const auto m = app::identify(cfg, dataset_dir(common), o, out);
      report(m, out);
      std::cout << app::read_json_file(fs::path(out) / "estimate.json").dump(2) << '\n';
    } else if (*camp) {
      report(app::campaign(resolve(common), dataset_dir(common), jobs, save_chains, out), out);
    } else if (*post) {
      app::PostOptions o;
      const ExperimentConfig cfg = resolve(common);
      o.burn_in = common.burn_in.value_or(0);
      if (!pivot.empty()) material_index(pivot);
      o.pivot = pivot;
      o.pivot_value = pivot_value;
      o.all_pivots = all_pivots;
      o.reference = cfg.material;
      std::vector<fs::path> paths(chain_files.begin(), chain_files.end());
      report(app::post(paths, o, out), out);
    } else if (*show) {
      std::cout << to_json(resolve(common)).dump(2) << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "unexpected failure: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

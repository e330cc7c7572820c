#pragma once

// JSON experiment configuration. Files are merged over the built-in defaults;
// unknown keys and type mismatches are errors naming the offending field.
// Any leaf can be overridden from the environment as BDIC_<PATH>, e.g.
// BDIC_MHA_STEPS=2000 or BDIC_IMAGING_SPECKLE_BLUR_SIGMA=0.8.

#include "bayesdic/harness.hpp"

#include <json.hpp>

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

namespace bayesdic {

using Json = nlohmann::json;

inline Json to_json(const ExperimentConfig& c) {
  const auto& g = c.geometry;
  const auto& im = c.imaging;
  const auto& sp = im.speckle;
  const auto& id = c.identification;
  const auto& gn = id.gauss_newton;
  const auto& m = c.mha;
  const auto& cc = c.campaign;
  Json j;
  j["seed"] = c.seed;
  j["geometry"] = {{"width", g.width},
                   {"height", g.height},
                   {"inclusions", g.inclusions},
                   {"diameter", g.diameter},
                   {"min_gap", g.min_gap},
                   {"max_attempts", g.max_attempts},
                   {"dns_edge", g.dns_edge},
                   {"mve_window", {g.mve_window.x0, g.mve_window.y0, g.mve_window.x1, g.mve_window.y1}},
                   {"mve_edge", g.mve_edge},
                   {"mve_boundary_nodes", g.mve_boundary_nodes}};
  j["material"] = Json::object();
  for (int i = 0; i < 4; ++i) j["material"][kMaterialNames[i]] = c.material.values[i];
  j["solver"] = {{"n_increments", c.solver.n_increments},
                 {"newton_tol", c.solver.newton_tol},
                 {"max_newton_iters", c.solver.max_newton_iters}};
  j["imaging"] = {{"fov_pixels", im.fov_pixels},
                  {"fov_margin", im.fov_margin},
                  {"sigma_eta", im.sigma_eta},
                  {"speckle",
                   {{"blob_density", sp.blob_density},
                    {"radius_min", sp.radius_min},
                    {"radius_max", sp.radius_max},
                    {"contrast_min", sp.contrast_min},
                    {"contrast_max", sp.contrast_max},
                    {"background", sp.background},
                    {"blur_sigma", sp.blur_sigma}}}};
  j["identification"] = {{"fix", id.fix},
                         {"initial_factor", id.initial_factor},
                         {"fd_step", gn.fd_step},
                         {"max_iters", gn.max_iters},
                         {"step_tol", gn.step_tol},
                         {"line_search_shrink", gn.line_search_shrink},
                         {"max_shrinks", gn.max_shrinks},
                         {"max_condition", gn.max_condition}};
  j["mha"] = {{"steps", m.steps},
              {"burn_in", m.burn_in},
              {"prior_sigma", m.prior_sigma},
              {"flat_prior", m.flat_prior},
              {"step_fraction", m.step_fraction},
              {"kin_step_fraction", m.kin_step_fraction},
              {"ebc_fraction", m.ebc_fraction},
              {"stride", m.stride},
              {"nonnorm_relaxed", m.nonnorm_relaxed},
              {"tune", m.tune},
              {"pilot_steps", m.pilot_steps}};
  Json tests = Json::array(), methods = Json::array();
  for (auto t : cc.tests) tests.push_back(to_string(t));
  for (auto mt : cc.methods) methods.push_back(to_string(mt));
  j["campaign"] = {{"tests", tests},
                   {"methods", methods},
                   {"perturbation", to_string(cc.kind)},
                   {"grid", cc.grid},
                   {"realizations", cc.realizations}};
  return j;
}

namespace detail {

inline const char* type_name(const Json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

inline bool same_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) return true;
  return std::string(type_name(a)) == type_name(b);
}

/// Overlays `user` on `base`, rejecting keys that `base` does not have.
inline void merge_strict(Json& base, const Json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "config must be a JSON object" : path + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown key '" + key + "'");
    Json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
      continue;
    }
    if (!same_kind(slot, it.value()))
      throw ConfigError(key + ": expected " + type_name(slot) + ", got " + type_name(it.value()));
    slot = it.value();
  }
}

inline void for_each_leaf(Json& j, const std::string& path, const std::function<void(const std::string&, Json&)>& fn) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (it.value().is_object()) for_each_leaf(it.value(), key, fn);
    else fn(key, it.value());
  }
}

inline std::string env_name(const std::string& path) {
  std::string out = "BDIC_";
  for (char ch : path) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

template <class T>
T get(const Json& j, const std::string& section, const std::string& key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

inline void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace detail

/// Converts a fully merged tree into a validated configuration.
inline ExperimentConfig from_json(const Json& j) {
  using detail::get;
  using detail::require;
  ExperimentConfig c;
  if (!j.contains("seed") || !j.at("seed").is_number_unsigned())
    throw ConfigError("seed: expected a non-negative integer");
  c.seed = j.at("seed").get<std::uint64_t>();
  auto& g = c.geometry;
  g.width = get<double>(j, "geometry", "width");
  g.height = get<double>(j, "geometry", "height");
  g.inclusions = get<int>(j, "geometry", "inclusions");
  g.diameter = get<double>(j, "geometry", "diameter");
  g.min_gap = get<double>(j, "geometry", "min_gap");
  g.max_attempts = get<long>(j, "geometry", "max_attempts");
  g.dns_edge = get<double>(j, "geometry", "dns_edge");
  const auto w = get<std::vector<double>>(j, "geometry", "mve_window");
  require(w.size() == 4, "geometry.mve_window", "expected [x0, y0, x1, y1]");
  g.mve_window = Rect{w[0], w[1], w[2], w[3]};
  g.mve_edge = get<double>(j, "geometry", "mve_edge");
  g.mve_boundary_nodes = get<int>(j, "geometry", "mve_boundary_nodes");
  require(g.width > 0 && g.height > 0, "geometry.width/height", "must be > 0");
  require(g.inclusions >= 0, "geometry.inclusions", "must be >= 0");
  require(g.diameter > 0, "geometry.diameter", "must be > 0");
  require(g.min_gap >= 0, "geometry.min_gap", "must be >= 0");
  require(g.max_attempts > 0, "geometry.max_attempts", "must be > 0");
  require(g.dns_edge > 0, "geometry.dns_edge", "must be > 0");
  require(g.mve_edge > 0, "geometry.mve_edge", "must be > 0");
  require(g.mve_window.width() > 0 && g.mve_window.height() > 0, "geometry.mve_window", "must have positive size");
  require(Rect{0, 0, g.width, g.height}.contains(g.mve_window), "geometry.mve_window", "must lie inside the domain");
  require(g.mve_boundary_nodes == 0 || (g.mve_boundary_nodes >= 8 && g.mve_boundary_nodes % 4 == 0),
          "geometry.mve_boundary_nodes", "must be 0 or a multiple of 4 that is >= 8");

  for (int i = 0; i < 4; ++i) c.material.values[i] = get<double>(j, "material", kMaterialNames[i]);
  require(c.material.valid(), "material", "moduli must be positive with Poisson ratios in (0, 0.5)");

  c.solver.n_increments = get<int>(j, "solver", "n_increments");
  c.solver.newton_tol = get<double>(j, "solver", "newton_tol");
  c.solver.max_newton_iters = get<int>(j, "solver", "max_newton_iters");
  try {
    c.solver.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("solver: ") + e.what());
  }

  auto& im = c.imaging;
  im.fov_pixels = get<int>(j, "imaging", "fov_pixels");
  im.fov_margin = get<double>(j, "imaging", "fov_margin");
  im.sigma_eta = get<double>(j, "imaging", "sigma_eta");
  const Json& sp = j.at("imaging").at("speckle");
  auto sget = [&](const char* k) { return detail::get<double>(Json{{"speckle", sp}}, "speckle", k); };
  im.speckle.blob_density = sget("blob_density");
  im.speckle.radius_min = sget("radius_min");
  im.speckle.radius_max = sget("radius_max");
  im.speckle.contrast_min = sget("contrast_min");
  im.speckle.contrast_max = sget("contrast_max");
  im.speckle.background = sget("background");
  im.speckle.blur_sigma = sget("blur_sigma");
  require(im.fov_pixels >= 16, "imaging.fov_pixels", "must be >= 16");
  require(im.fov_margin >= 0, "imaging.fov_margin", "must be >= 0");
  require(im.sigma_eta > 0, "imaging.sigma_eta", "must be > 0");
  try {
    im.speckle.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("imaging.speckle: ") + e.what());
  }
  const Rect fov = fov_window(c);
  require(Rect{0, 0, g.width, g.height}.contains(fov), "imaging.fov_margin", "field of view leaves the domain");

  auto& id = c.identification;
  id.fix = get<std::string>(j, "identification", "fix");
  if (!id.fix.empty()) {
    try {
      material_index(id.fix);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("identification.fix: ") + e.what());
    }
  }
  id.initial_factor = get<double>(j, "identification", "initial_factor");
  require(id.initial_factor > 0, "identification.initial_factor", "must be > 0");
  auto& gn = id.gauss_newton;
  gn.fd_step = get<double>(j, "identification", "fd_step");
  gn.max_iters = get<int>(j, "identification", "max_iters");
  gn.step_tol = get<double>(j, "identification", "step_tol");
  gn.line_search_shrink = get<double>(j, "identification", "line_search_shrink");
  gn.max_shrinks = get<int>(j, "identification", "max_shrinks");
  gn.max_condition = get<double>(j, "identification", "max_condition");
  try {
    gn.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("identification: ") + e.what());
  }
  require(gn.max_condition > 1, "identification.max_condition", "must be > 1");

  auto& m = c.mha;
  m.steps = get<int>(j, "mha", "steps");
  m.burn_in = get<int>(j, "mha", "burn_in");
  m.prior_sigma = get<double>(j, "mha", "prior_sigma");
  m.flat_prior = get<bool>(j, "mha", "flat_prior");
  m.step_fraction = get<double>(j, "mha", "step_fraction");
  m.kin_step_fraction = get<double>(j, "mha", "kin_step_fraction");
  m.ebc_fraction = get<double>(j, "mha", "ebc_fraction");
  m.stride = get<int>(j, "mha", "stride");
  m.nonnorm_relaxed = get<bool>(j, "mha", "nonnorm_relaxed");
  m.tune = get<bool>(j, "mha", "tune");
  m.pilot_steps = get<int>(j, "mha", "pilot_steps");
  require(m.steps >= 1, "mha.steps", "must be >= 1");
  require(m.burn_in >= 0 && m.burn_in < m.steps, "mha.burn_in", "must satisfy 0 <= burn_in < steps");
  require(m.prior_sigma > 0, "mha.prior_sigma", "must be > 0");
  require(m.step_fraction > 0, "mha.step_fraction", "must be > 0");
  require(m.kin_step_fraction > 0, "mha.kin_step_fraction", "must be > 0");
  require(m.ebc_fraction >= 0, "mha.ebc_fraction", "must be >= 0");
  require(m.stride >= 1, "mha.stride", "must be >= 1");
  require(m.pilot_steps >= 500, "mha.pilot_steps", "must be >= 500");

  auto& cc = c.campaign;
  cc.tests.clear();
  cc.methods.clear();
  try {
    for (const auto& t : get<std::vector<std::string>>(j, "campaign", "tests")) cc.tests.push_back(parse_load_case(t));
    for (const auto& s : get<std::vector<std::string>>(j, "campaign", "methods")) cc.methods.push_back(parse_method(s));
    cc.kind = parse_perturbation(get<std::string>(j, "campaign", "perturbation"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("campaign: ") + e.what());
  }
  cc.grid = get<std::vector<double>>(j, "campaign", "grid");
  cc.realizations = get<int>(j, "campaign", "realizations");
  require(!cc.tests.empty(), "campaign.tests", "must not be empty");
  require(!cc.methods.empty(), "campaign.methods", "must not be empty");
  require(!cc.grid.empty(), "campaign.grid", "must not be empty");
  for (double v : cc.grid) require(v >= 0 && std::isfinite(v), "campaign.grid", "values must be finite and >= 0");
  require(cc.realizations >= 1, "campaign.realizations", "must be >= 1");
  return c;
}

/// Applies BDIC_* environment overrides to a merged tree.
inline void apply_env_overrides(Json& j, const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  detail::for_each_leaf(j, "", [&](const std::string& path, Json& leaf) {
    const std::string name = detail::env_name(path);
    const char* raw = getenv_fn(name.c_str());
    if (!raw) return;
    Json v;
    try {
      v = Json::parse(raw);
    } catch (const Json::parse_error&) {
      v = std::string(raw);
    }
    if (!detail::same_kind(leaf, v))
      throw ConfigError(name + ": expected " + detail::type_name(leaf) + ", got " + detail::type_name(v));
    leaf = v;
  });
}

/// Parses JSON text, reporting syntax errors with line and column.
inline Json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

/// Defaults, then the document, then environment overrides, then validation.
inline ExperimentConfig resolve_config(const Json& user, bool use_env = true) {
  Json merged = to_json(ExperimentConfig{});
  detail::merge_strict(merged, user, "");
  if (use_env) apply_env_overrides(merged);
  return from_json(merged);
}

inline ExperimentConfig load_config(const std::string& path, bool use_env = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return resolve_config(parse_json_text(ss.str(), path), use_env);
}

}  // namespace bayesdic

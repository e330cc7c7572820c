#pragma once

#include "bayesdic/harness.hpp"

#include <filesystem>
#include <string>

namespace bayesdic::fixtures {

/// A 4 x 4 specimen with two inclusions and a 64 px camera: the whole
/// pipeline in well under a second.
inline ExperimentConfig small_config() {
  ExperimentConfig c;
  c.geometry.width = 4.0;
  c.geometry.height = 4.0;
  c.geometry.inclusions = 2;
  c.geometry.mve_window = Rect{1.0, 1.0, 3.0, 3.0};
  c.geometry.dns_edge = 0.25;
  c.geometry.mve_edge = 0.25;
  c.imaging.fov_pixels = 64;
  c.imaging.fov_margin = 0.5;
  c.solver.n_increments = 2;
  c.mha.steps = 300;
  c.mha.burn_in = 150;
  c.campaign.realizations = 2;
  return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::path(BAYESDIC_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace bayesdic::fixtures

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sage/io.hpp"
#include "sage/trainer.hpp"

namespace sage {

struct RunSummary {
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  std::optional<MetricsRecord> last;
  double valid_mass = 0.0;             // exact, final policy
  std::optional<double> y_star_prob;   // rare-mode environments
  std::vector<std::string> warnings;
};

// Builds the environment, trains, and writes metrics.csv / metrics.json /
// final_policy.json / resolved_config.json into out_dir.
RunSummary run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

struct GridAxis {
  std::string key;          // dotted config key, e.g. "guide.tau"
  std::vector<Json> values;
};

// "guide.tau=0.8,1.2,2.0" -> axis; values parse as JSON, else as strings.
GridAxis parse_grid_axis(const std::string& text);

struct SweepPoint {
  std::size_t index = 0;
  std::vector<Json> coords;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunSummary summary;
};

// One run per grid point (cartesian product, last axis fastest). Seeds come
// from the grid when it has a "seed" axis, otherwise from
// derive_seed(master, point index). Failures are recorded, not thrown.
std::vector<SweepPoint> run_sweep(const Json& base_config, const std::filesystem::path& base_dir,
                                  const std::vector<GridAxis>& grid,
                                  const std::filesystem::path& out_dir, int jobs);

std::string sweep_summary_csv(const std::vector<GridAxis>& grid,
                              const std::vector<SweepPoint>& points);

}  // namespace sage

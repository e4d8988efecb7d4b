#include "sage/experiment.hpp"

#include <fstream>
#include <sstream>

#include "sage/error.hpp"

namespace sage {

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string csv_cell(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) return format_double(v.get<double>());
  return v.dump();
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  const LoadedEnv loaded = build_environment(cfg);
  TrainerConfig tc = cfg.trainer;
  tc.seed = cfg.seed;
  const TrainResult result = train(tc, loaded.env, loaded.reference);

  RunSummary s;
  s.seed = cfg.seed;
  s.steps = tc.steps;
  s.warnings = loaded.warnings;
  if (!result.log.empty()) s.last = result.log.back();
  for (const auto& y : loaded.env.valid_trajectories()) {
    s.valid_mass += trajectory_prob(result.final_policy, loaded.env, y);
  }
  if (loaded.y_star) s.y_star_prob = trajectory_prob(result.final_policy, loaded.env, *loaded.y_star);

  std::filesystem::create_directories(out_dir);
  const Json resolved = cfg.resolved();
  if (cfg.output.csv) write_file(out_dir / "metrics.csv", metrics_csv(result.log));
  if (cfg.output.json) {
    const Json doc = {{"seed", cfg.seed},
                      {"resolved_config", resolved},
                      {"warnings", loaded.warnings},
                      {"metrics", metrics_json(result.log)}};
    write_file(out_dir / "metrics.json", doc.dump(2) + "\n");
  }
  const Json ckpt = {{"seed", cfg.seed},
                     {"resolved_config", resolved},
                     {"policy", policy_to_json(result.final_policy)}};
  write_file(out_dir / "final_policy.json", ckpt.dump() + "\n");
  write_file(out_dir / "resolved_config.json", resolved.dump(2) + "\n");
  return s;
}

GridAxis parse_grid_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(text, "grid axis must look like key=v1,v2,...");
  }
  GridAxis axis;
  axis.key = text.substr(0, eq);
  std::stringstream rest(text.substr(eq + 1));
  std::string item;
  while (std::getline(rest, item, ',')) {
    if (item.empty()) continue;
    try {
      axis.values.push_back(Json::parse(item));
    } catch (const Json::parse_error&) {
      axis.values.push_back(item);
    }
  }
  if (axis.values.empty()) throw ConfigError(axis.key, "grid axis has no values");
  return axis;
}

std::vector<SweepPoint> run_sweep(const Json& base_config, const std::filesystem::path& base_dir,
                                  const std::vector<GridAxis>& grid,
                                  const std::filesystem::path& out_dir, int jobs) {
  if (grid.empty()) throw ConfigError("grid", "empty grid");
  std::size_t total = 1;
  for (const auto& a : grid) total *= a.values.size();
  const std::uint64_t master = base_config.value("seed", std::uint64_t{3407});
  bool seed_axis = false;
  for (const auto& a : grid) seed_axis = seed_axis || a.key == "seed";

  std::vector<SweepPoint> points(total);
  for (std::size_t i = 0; i < total; ++i) {
    auto& p = points[i];
    p.index = i;
    std::size_t rem = i;
    p.coords.resize(grid.size());
    for (std::size_t a = grid.size(); a-- > 0;) {
      p.coords[a] = grid[a].values[rem % grid[a].values.size()];
      rem /= grid[a].values.size();
    }
  }

  auto run_point = [&](SweepPoint& p) {
    try {
      Json doc = base_config;
      if (!seed_axis) doc["seed"] = derive_seed(master, p.index);
      for (std::size_t a = 0; a < grid.size(); ++a) set_dotted(doc, grid[a].key, p.coords[a]);
      const auto cfg = parse_experiment_config(doc, base_dir);
      p.seed = cfg.seed;
      p.summary = run_experiment(cfg, out_dir / ("point_" + std::to_string(p.index)));
      p.ok = true;
    } catch (const std::exception& e) {
      p.ok = false;
      p.error = e.what();
    }
  };

  const int n = static_cast<int>(total);
  if (jobs > 1) {
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
    for (int i = 0; i < n; ++i) run_point(points[static_cast<std::size_t>(i)]);
  } else {
    for (int i = 0; i < n; ++i) run_point(points[static_cast<std::size_t>(i)]);
  }
  return points;
}

std::string sweep_summary_csv(const std::vector<GridAxis>& grid,
                              const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  os << "point";
  for (const auto& a : grid) os << ',' << a.key;
  os << ",seed,status,final_mean_train_reward,final_kl_value,final_grad_norm,pass_at_1,"
        "pass_at_kmax,support_size,valid_mass,y_star_prob,error\n";
  for (const auto& p : points) {
    os << p.index;
    for (const auto& c : p.coords) os << ',' << csv_cell(c);
    os << ',' << p.seed << ',' << (p.ok ? "ok" : "failed");
    const auto& last = p.summary.last;
    if (p.ok && last) {
      os << ',' << format_double(last->mean_train_reward) << ',' << format_double(last->kl_value)
         << ',' << format_double(last->grad_norm);
    } else {
      os << ",,,";
    }
    if (p.ok && last && last->eval && !last->eval->pass_at_k.empty()) {
      const auto& pk = last->eval->pass_at_k;
      const auto one = pk.find(1);
      os << ',' << (one != pk.end() ? format_double(one->second) : "") << ','
         << format_double(pk.rbegin()->second) << ',' << last->eval->support_size_at_eps;
    } else {
      os << ",,,";
    }
    os << ',' << (p.ok ? format_double(p.summary.valid_mass) : "");
    os << ',' << (p.ok && p.summary.y_star_prob ? format_double(*p.summary.y_star_prob) : "");
    std::string err = p.error;
    for (char& ch : err) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    os << ',' << err << '\n';
  }
  return os.str();
}

}  // namespace sage

// Command-line front end: run, sweep, verify, toy, passk.
//
// Exit codes: 0 success, 1 runtime or assertion failure, 2 invalid input.

#include <CLI11.hpp>
#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sage/error.hpp"
#include "sage/experiment.hpp"
#include "sage/io.hpp"
#include "sage/metrics.hpp"
#include "sage/verify.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kInvalid = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int instances = 0;
  int jobs = 0;
  std::vector<std::string> grid;
  std::string suite;
  std::string grades;
  std::vector<std::int64_t> ks{1};
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw sage::Error("cannot write " + path.string());
  out << text;
}

sage::Json load_config_doc(const Options& o) {
  if (o.config.empty()) throw sage::ConfigError("--config", "a config file is required");
  auto doc = sage::read_json_file(o.config);
  if (!doc.is_object()) throw sage::ConfigError("<root>", "expected an object");
  if (o.seed) doc["seed"] = *o.seed;
  return doc;
}

int cmd_run(const Options& o) {
  const auto doc = load_config_doc(o);
  const auto cfg = sage::parse_experiment_config(doc, fs::path(o.config).parent_path());
  const fs::path out = o.out_dir.empty() ? fs::path(cfg.output.dir) : fs::path(o.out_dir);
  const auto s = sage::run_experiment(cfg, out);
  std::cout << "seed " << s.seed << ", " << s.steps << " steps -> " << out.string() << "\n";
  for (const auto& w : s.warnings) std::cout << "warning: " << w << "\n";
  if (s.last) {
    std::cout << "final mean_train_reward " << s.last->mean_train_reward << ", kl_value "
              << s.last->kl_value << "\n";
  }
  std::cout << "exact valid mass " << s.valid_mass << "\n";
  if (s.y_star_prob) std::cout << "pi(y*) " << *s.y_star_prob << "\n";
  return kOk;
}

int cmd_sweep(const Options& o) {
  const auto doc = load_config_doc(o);
  // The base config must be valid on its own before any point runs.
  const auto base = sage::parse_experiment_config(doc, fs::path(o.config).parent_path());
  if (o.grid.empty()) throw sage::ConfigError("--grid", "empty grid");
  std::vector<sage::GridAxis> grid;
  for (const auto& g : o.grid) grid.push_back(sage::parse_grid_axis(g));
  const fs::path out = o.out_dir.empty() ? fs::path(base.output.dir) : fs::path(o.out_dir);
  const int jobs = o.jobs > 0 ? o.jobs : omp_get_max_threads();
  const auto points =
      sage::run_sweep(doc, fs::path(o.config).parent_path(), grid, out, jobs);
  write_text(out / "sweep_summary.csv", sage::sweep_summary_csv(grid, points));
  int failed = 0;
  for (const auto& p : points) {
    if (!p.ok) {
      ++failed;
      std::cerr << "point " << p.index << " failed: " << p.error << "\n";
    }
  }
  std::cout << points.size() << " points, " << failed << " failed -> "
            << (out / "sweep_summary.csv").string() << "\n";
  return failed == 0 ? kOk : kFailure;
}

int cmd_verify(const Options& o, const std::string& suite) {
  if (!sage::is_suite_name(suite)) {
    throw sage::ConfigError("suite", "unknown suite '" + suite +
                                         "' (toy, expansion, offtarget, preservation, identities, all)");
  }
  sage::SuiteOptions so;
  so.instances = o.instances;
  if (o.seed) so.seed = *o.seed;
  const auto r = sage::run_suite(suite, so);
  const fs::path out = o.out_dir.empty() ? fs::path(".") : fs::path(o.out_dir);
  const fs::path report = out / ("verify_" + suite + ".json");
  write_text(report, r.report.dump(2) + "\n");
  std::cout << r.text;
  std::cout << "verify " << suite << ": " << (r.passed ? "PASS" : "FAIL") << " (report "
            << report.string() << ")\n";
  if (!r.passed) {
    // Failing instances are embedded in the report; echo them for replay.
    auto dump_failures = [](const sage::Json& rep) {
      if (rep.contains("failing_instances")) std::cerr << rep["failing_instances"].dump() << "\n";
    };
    dump_failures(r.report);
    if (r.report.contains("suites")) {
      for (const auto& s : r.report["suites"]) dump_failures(s);
    }
  }
  return r.passed ? kOk : kFailure;
}

struct GradeLine {
  std::string id;
  std::int64_t n = 0;
  std::int64_t c = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_count(const std::string& text, std::int64_t& out) {
  try {
    std::size_t used = 0;
    out = std::stoll(text, &used);
    return used == text.size();
  } catch (const std::exception&) {
    return false;
  }
}

int cmd_passk(const Options& o) {
  std::ifstream in(o.grades);
  if (!in) throw sage::ConfigError(o.grades, "cannot open grades file");
  std::vector<GradeLine> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(trim(cell));
    GradeLine g;
    if (f.size() != 3 || f[0].empty() || !parse_count(f[1], g.n) || !parse_count(f[2], g.c) ||
        g.n < 1 || g.c < 0 || g.c > g.n) {
      std::cerr << o.grades << ":" << lineno << ": malformed line (expected `problem_id, n, c` "
                << "with 0 <= c <= n, n >= 1): " << line << "\n";
      return kInvalid;
    }
    g.id = f[0];
    rows.push_back(g);
  }
  if (rows.empty()) {
    std::cerr << o.grades << ": no grade lines\n";
    return kInvalid;
  }
  for (const auto& g : rows) {
    for (auto k : o.ks) {
      if (k < 1 || k > g.n) {
        std::cerr << "k=" << k << " is outside [1, n] for problem " << g.id << " (n=" << g.n
                  << ")\n";
        return kInvalid;
      }
    }
  }

  std::ostringstream csv;
  csv << "problem_id,n,c";
  for (auto k : o.ks) csv << ",pass_at_" << k;
  csv << "\n";
  std::vector<double> sums(o.ks.size(), 0.0);
  for (const auto& g : rows) {
    csv << g.id << ',' << g.n << ',' << g.c;
    for (std::size_t i = 0; i < o.ks.size(); ++i) {
      const double v = sage::pass_at_k(g.n, g.c, o.ks[i]);
      sums[i] += v;
      csv << ',' << sage::format_double(v);
    }
    csv << "\n";
  }
  csv << "mean,,";
  for (double s : sums) csv << ',' << sage::format_double(s / static_cast<double>(rows.size()));
  csv << "\n";

  std::cout << std::left << std::setw(16) << "problem" << std::right << std::setw(8) << "n"
            << std::setw(8) << "c";
  for (auto k : o.ks) std::cout << std::setw(14) << ("pass@" + std::to_string(k));
  std::cout << "\n" << std::fixed << std::setprecision(4);
  for (const auto& g : rows) {
    std::cout << std::left << std::setw(16) << g.id << std::right << std::setw(8) << g.n
              << std::setw(8) << g.c;
    for (auto k : o.ks) std::cout << std::setw(14) << sage::pass_at_k(g.n, g.c, k);
    std::cout << "\n";
  }
  std::cout << std::left << std::setw(32) << "mean" << std::right;
  for (double s : sums) std::cout << std::setw(14) << s / static_cast<double>(rows.size());
  std::cout << "\n";

  const fs::path out = o.out_dir.empty() ? fs::path(".") : fs::path(o.out_dir);
  write_text(out / "passk.csv", csv.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shaped-anchor KL-regularized RL laboratory on token-tree environments"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Master seed (overrides the config)");
    sub->add_option("--out-dir", o.out_dir, "Output directory");
    sub->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::NonNegativeNumber);
  };

  auto* run = app.add_subcommand("run", "Train one configuration and write its metrics");
  run->add_option("--config", o.config, "Experiment config (JSON)")->required();
  add_common(run);

  auto* sweep = app.add_subcommand("sweep", "Run a grid of configurations in parallel");
  sweep->add_option("--config", o.config, "Base experiment config (JSON)")->required();
  sweep->add_option("--grid", o.grid, "Axis as key=v1,v2,... (repeatable)");
  add_common(sweep);

  auto* verify = app.add_subcommand("verify", "Run verifier batteries");
  verify->add_option("suite", o.suite, "toy | expansion | offtarget | preservation | identities | all")
      ->required();
  verify->add_option("--instances", o.instances, "Instances (or trials) per battery")
      ->check(CLI::NonNegativeNumber);
  add_common(verify);

  auto* toy = app.add_subcommand("toy", "Alias for `verify toy`");
  add_common(toy);

  auto* passk = app.add_subcommand("passk", "Unbiased pass@k from graded sample counts");
  passk->add_option("grades", o.grades, "File of `problem_id, n, c` lines")->required();
  passk->add_option("--k", o.ks, "Budgets (comma separated)")->delimiter(',');
  passk->add_option("--out-dir", o.out_dir, "Directory for passk.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (o.jobs > 0) omp_set_num_threads(o.jobs);
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o);
    if (*verify) return cmd_verify(o, o.suite);
    if (*toy) return cmd_verify(o, "toy");
    if (*passk) return cmd_passk(o);
  } catch (const sage::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kInvalid;
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/env.hpp"
#include "sage/policy.hpp"
#include "sage/rare_mode.hpp"
#include "sage/trainer.hpp"

namespace sage {

using Json = nlohmann::json;

// Environment plus the reference policy it ships with.
struct LoadedEnv {
  TokenTreeEnvironment env;
  TabularPolicy reference;
  std::optional<Trajectory> y_star;  // rare-mode environments only
  std::vector<std::string> warnings;
};

// {vocab_size, max_depth, valid_trajectories, ref_logits (one array per context)}.
// Doubles are written with round-trip precision, so load(save(x)) is bit-exact.
Json env_to_json(const TokenTreeEnvironment& env, const TabularPolicy& reference);
LoadedEnv env_from_json(const Json& j, const std::string& where = "env");
void save_env(const std::filesystem::path& path, const TokenTreeEnvironment& env,
              const TabularPolicy& reference);
LoadedEnv load_env(const std::filesystem::path& path);

Json policy_to_json(const TabularPolicy& policy);
TabularPolicy policy_from_json(const Json& j);

struct OutputSpec {
  std::string dir = "out";
  bool csv = true;
  bool json = true;
};

// Validated experiment description. Unknown keys anywhere are rejected with
// ConfigError naming the dotted key path.
struct ExperimentConfig {
  std::uint64_t seed = 3407;
  Json env;  // the raw env section; resolved by build_environment
  std::filesystem::path base_dir;  // for relative env file paths
  TrainerConfig trainer;
  OutputSpec output;

  Json resolved() const;  // full echo with defaults filled in
};

ExperimentConfig parse_experiment_config(const Json& j,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
Json read_json_file(const std::filesystem::path& path);

LoadedEnv build_environment(const ExperimentConfig& cfg);

// Sets a dotted key ("guide.tau", "seed") on a config document, creating
// intermediate objects. The parser still rejects keys it does not know.
void set_dotted(Json& doc, const std::string& dotted_key, const Json& value);

// Fixed columns: step, mean_train_reward, kl_value, grad_norm,
// mean_rollout_entropy, pass_at_1, pass_at_kmax, support_size. The eval
// columns are empty on steps without an evaluation snapshot.
std::string metrics_csv(const std::vector<MetricsRecord>& log);
Json metrics_json(const std::vector<MetricsRecord>& log);

// Shortest round-trip decimal for a double (used by every CSV writer).
std::string format_double(double v);

}  // namespace sage

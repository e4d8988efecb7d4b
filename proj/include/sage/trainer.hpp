#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sage/env.hpp"
#include "sage/guides.hpp"
#include "sage/metrics.hpp"
#include "sage/policy.hpp"
#include "sage/rng.hpp"

namespace sage {

enum class KlMode { reverse, forward, none, sage };

std::string to_string(KlMode mode);
KlMode parse_kl_mode(const std::string& name);

struct EvalSpec {
  std::int64_t n_samples = 256;
  std::vector<std::int64_t> ks{1, 16, 256};
  double epsilon = 1e-3;
  std::int64_t every = 0;  // 0: no periodic evaluation
};

struct TrainerConfig {
  double beta = 0.05;
  int group_size = 8;
  std::int64_t steps = 200;
  double learning_rate = 1.0;
  double clip_low = 0.2;
  double clip_high = 0.2;  // 0.28 for the asymmetric (DAPO-style) bound
  KlMode kl_mode = KlMode::reverse;
  GuideSpec guide;
  double adv_std_floor = 1e-8;
  std::uint64_t seed = 3407;

  // Ablation switches used by the gradient oracles.
  bool normalize_advantages = true;
  bool clip = true;
  // sage mode: add the centered per-rollout guide bonus beta * sum_t log q_t
  // to the advantages (score-function gradient of the bonus term).
  bool guide_bonus = true;

  EvalSpec eval;

  void validate() const;
};

struct Rollout {
  Trajectory tokens;
  std::vector<TokenRecord> records;  // sampling-time statistics
  double reward = 0.0;
  GuideEvaluation guide;  // frozen for the step
};

// Rows of d(loss)/d(logits) for the contexts touched in one step.
struct SparseGradient {
  std::map<std::size_t, std::vector<double>> rows;

  std::vector<double>& row(std::size_t context, int vocab_size);
  double l2_norm() const;
  std::vector<double> to_dense(const TreeShape& shape) const;
};

struct LossTerms {
  SparseGradient gradient;
  double loss = 0.0;
  double kl_value = 0.0;  // mean per-token penalty under the configured mode
};

struct MetricsRecord {
  std::int64_t step = 0;
  double mean_train_reward = 0.0;
  double kl_value = 0.0;
  double grad_norm = 0.0;
  double mean_rollout_entropy = 0.0;
  bool zero_advantage = false;
  std::optional<EvalReport> eval;
};

struct TrainState {
  TabularPolicy policy;
  TabularPolicy old_policy;
  std::int64_t step = 0;
  Rng rng;
};

TrainState make_train_state(const TabularPolicy& initial, std::uint64_t seed);

// Draws G rollouts from `snapshot`, grades them and evaluates the guide once
// per rollout from sampling-time statistics.
std::vector<Rollout> sample_group(const TabularPolicy& snapshot, const TokenTreeEnvironment& env,
                                  const TrainerConfig& cfg, const GuideParams& params, Rng& rng);

// (r - mean) / (std + floor); all zero when std == 0. Raw rewards when
// normalization is off.
std::vector<double> group_advantages(std::span<const double> rewards, double std_floor,
                                     bool normalize);

// Per-token averaged clipped surrogate plus beta-weighted KL penalty.
LossTerms surrogate_loss(const TabularPolicy& current, const TabularPolicy& reference,
                         std::span<const Rollout> rollouts, std::span<const double> advantages,
                         const TrainerConfig& cfg);

struct StepResult {
  MetricsRecord metrics;
  std::vector<Rollout> rollouts;
  std::vector<double> advantages;
};

StepResult grpo_step(TrainState& state, const TokenTreeEnvironment& env,
                     const TabularPolicy& reference, const TrainerConfig& cfg);

// Exact objective E_pi[r] - beta * D under the mode (reverse: KL(pi||ref);
// sage: pseudo-KL(pi || q*ref); forward: KL(ref||pi); none: 0), by enumeration.
double exact_objective(const TabularPolicy& policy, const TokenTreeEnvironment& env,
                       const TabularPolicy& reference, double beta, KlMode mode,
                       std::span<const double> q_values = {});

// Gradient of exact_objective with respect to every logit (ascent direction),
// laid out like TabularPolicy::flat_logits().
std::vector<double> exact_policy_gradient(const TabularPolicy& policy,
                                          const TokenTreeEnvironment& env,
                                          const TabularPolicy& reference, double beta,
                                          KlMode mode, std::span<const double> q_values = {});

struct TrainResult {
  std::vector<MetricsRecord> log;
  TabularPolicy final_policy;
};

TrainResult train(const TrainerConfig& cfg, const TokenTreeEnvironment& env,
                  const TabularPolicy& reference);
TrainResult train(const TrainerConfig& cfg, const TokenTreeEnvironment& env,
                  const TabularPolicy& reference, const TabularPolicy& initial);

}  // namespace sage

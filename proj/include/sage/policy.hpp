#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sage/env.hpp"
#include "sage/rng.hpp"

namespace sage {

// Per-context categorical distributions parameterized by unconstrained logits.
// Copies are independent parameter sets.
class TabularPolicy {
 public:
  TabularPolicy() = default;
  // Uniform policy (all logits zero).
  explicit TabularPolicy(const TreeShape& shape);
  TabularPolicy(const TreeShape& shape, std::vector<double> logits);

  const TreeShape& shape() const { return shape_; }
  int vocab_size() const { return shape_.vocab_size(); }
  std::size_t num_contexts() const { return shape_.num_contexts(); }

  std::span<const double> logits(std::size_t context) const;
  std::span<double> logits(std::size_t context);
  const std::vector<double>& flat_logits() const { return logits_; }

  std::vector<double> probs(std::size_t context) const;
  void probs_into(std::size_t context, std::span<double> out) const;
  double prob(std::size_t context, Token token) const;
  double log_prob(std::size_t context, Token token) const;

 private:
  TreeShape shape_;
  std::vector<double> logits_;
};

// Numerically stable softmax of a logit row.
void softmax_into(std::span<const double> logits, std::span<double> out);
double log_sum_exp(std::span<const double> values);

// Probabilities aligned with enumeration order.
struct TrajectoryDistribution {
  std::vector<double> probs;
  double normalizer = 1.0;
  double log_normalizer = 0.0;

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
};

double trajectory_prob(const TabularPolicy& policy, const TokenTreeEnvironment& env,
                       std::span<const Token> y);

TrajectoryDistribution exact_distribution(const TabularPolicy& policy,
                                          const TokenTreeEnvironment& env);

double token_entropy(const TabularPolicy& policy, std::size_t context);
double token_surprisal(const TabularPolicy& policy, std::size_t context, Token token);

struct TokenRecord {
  std::size_t context = 0;
  Token token = 0;
  double prob = 0.0;
  double entropy = 0.0;
  double surprisal = 0.0;
};

struct SampledTrajectory {
  Trajectory tokens;
  std::vector<TokenRecord> records;
};

// Ancestral sampling; per-token statistics are taken under `policy`.
SampledTrajectory sample_trajectory(const TabularPolicy& policy, const TokenTreeEnvironment& env,
                                    Rng& rng);

}  // namespace sage

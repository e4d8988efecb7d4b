#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sage/policy.hpp"
#include "sage/rng.hpp"

namespace sage {

// Periodic cosine schedule with a per-period multiplicative envelope:
//   value = lo + (hi - lo) * decay^p * (1 + cos(phi)) / 2
// where x = step * periods / total_steps, p = floor(x), phi = 2*pi*frac(x).
struct CosineSchedule {
  double lo = 0.0;
  double hi = 0.0;
  double decay = 0.9;
  int periods = 8;
};

double schedule_value(const CosineSchedule& s, std::int64_t step, std::int64_t total_steps);

enum class GuideFamily { constant, random, token, branch };

std::string to_string(GuideFamily family);
GuideFamily parse_guide_family(const std::string& name);

struct GuideSpec {
  GuideFamily family = GuideFamily::constant;
  // random family
  CosineSchedule epsilon{0.0, 0.1, 0.9, 8};
  CosineSchedule random_sigma{0.05, 0.15, 0.9, 8};
  // token family
  CosineSchedule alpha{0.1, 0.3, 0.9, 8};
  CosineSchedule token_sigma{0.1, 0.25, 0.9, 8};
  // branch family (fixed scalars)
  double gamma = 0.3;
  double tau = 1.2;
  double factor_floor = 1e-3;

  void validate() const;
};

// Scheduled parameters resolved for one trainer step.
struct GuideParams {
  double epsilon = 0.0;
  double sigma = 0.0;
  double alpha = 0.0;
};

GuideParams resolve_guide_params(const GuideSpec& spec, std::int64_t step,
                                 std::int64_t total_steps);

struct GuideEvaluation {
  std::vector<double> factors;
  double log_product = 0.0;
};

// q = 1 with probability eps, otherwise max(floor, 1 + sigma * z).
// Draws one uniform and one normal per token regardless of outcome.
GuideEvaluation evaluate_guide_random(std::size_t length, double eps, double sigma, Rng& rng,
                                      double factor_floor);

// w_t = min-max scaled surprisal over this trajectory (0 when all equal);
// q_t = max(floor, 1 + alpha * w_t + w_t * sigma * z).
GuideEvaluation evaluate_guide_token(std::span<const double> surprisals, double alpha,
                                     double sigma, Rng& rng, double factor_floor);

// q_t = 1 + gamma * max(H_t - tau, 0). Deterministic; every factor >= 1.
GuideEvaluation evaluate_guide_branch(std::span<const double> entropies, double gamma,
                                      double tau);

// Sum of log factors; throws DomainError on a nonpositive factor.
double guide_log_product(const GuideEvaluation& eval);

// Evaluates the configured family on one sampled trajectory.
GuideEvaluation evaluate_guide(const GuideSpec& spec, const GuideParams& params,
                               std::span<const TokenRecord> records, Rng& rng);

}  // namespace sage

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "sage/env.hpp"
#include "sage/policy.hpp"
#include "sage/rng.hpp"

namespace sage {

// Unbiased pass@k from n graded samples with c correct:
//   1 - C(n-c, k) / C(n, k) = 1 - prod_{i<k} (n-c-i) / (n-i).
double pass_at_k(std::int64_t n, std::int64_t c, std::int64_t k);

struct EvalReport {
  std::int64_t n_samples = 0;
  std::int64_t correct_count = 0;
  std::map<std::int64_t, double> pass_at_k;
  std::int64_t support_size_at_eps = 0;  // exact, from the enumerated distribution
  double mean_trajectory_entropy = 0.0;  // mean over samples of summed token entropies
};

EvalReport evaluate_policy(const TabularPolicy& policy, const TokenTreeEnvironment& env,
                           std::int64_t n_samples, std::span<const std::int64_t> ks,
                           double epsilon, Rng& rng);

}  // namespace sage

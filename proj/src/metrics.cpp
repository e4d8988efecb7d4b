#include "sage/metrics.hpp"

#include <string>

#include "sage/error.hpp"

namespace sage {

double pass_at_k(std::int64_t n, std::int64_t c, std::int64_t k) {
  if (n < 1) throw DomainError("pass@k needs n >= 1");
  if (c < 0 || c > n) throw DomainError("pass@k needs 0 <= c <= n");
  if (k < 1 || k > n) {
    throw DomainError("pass@k needs 1 <= k <= n (k=" + std::to_string(k) +
                      ", n=" + std::to_string(n) + ")");
  }
  if (n - c < k) return 1.0;
  double miss = 1.0;
  for (std::int64_t i = 0; i < k; ++i) {
    miss *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  }
  return 1.0 - miss;
}

EvalReport evaluate_policy(const TabularPolicy& policy, const TokenTreeEnvironment& env,
                           std::int64_t n_samples, std::span<const std::int64_t> ks,
                           double epsilon, Rng& rng) {
  if (n_samples < 1) throw DomainError("evaluate_policy needs n_samples >= 1");
  for (auto k : ks) {
    if (k < 1 || k > n_samples) throw DomainError("every k must lie in [1, n_samples]");
  }
  EvalReport report;
  report.n_samples = n_samples;
  double entropy_sum = 0.0;
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const auto s = sample_trajectory(policy, env, rng);
    report.correct_count += env.reward(s.tokens);
    for (const auto& r : s.records) entropy_sum += r.entropy;
  }
  report.mean_trajectory_entropy = entropy_sum / static_cast<double>(n_samples);
  for (auto k : ks) report.pass_at_k[k] = pass_at_k(n_samples, report.correct_count, k);

  // Exact probabilities of the valid trajectories; no sampling involved.
  for (const auto& y : env.valid_trajectories()) {
    if (trajectory_prob(policy, env, y) > epsilon) ++report.support_size_at_eps;
  }
  return report;
}

}  // namespace sage

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "sage/error.hpp"
#include "sage/metrics.hpp"
#include "test_util.hpp"

using namespace sage;

namespace {

// Average over every k-subset of n samples (the first c correct) of "the
// subset contains a correct sample".
double subset_oracle(int n, int c, int k) {
  long hits = 0;
  long total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    ++total;
    const unsigned correct = (1u << c) - 1u;
    hits += (mask & correct) != 0;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("pass@k edge cases") {
  for (int k = 1; k <= 10; ++k) {
    CHECK(pass_at_k(10, 0, k) == 0.0);
    CHECK(pass_at_k(10, 10, k) == 1.0);
  }
  CHECK(pass_at_k(4, 2, 2) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK_THROWS_AS(pass_at_k(4, 2, 5), DomainError);
  CHECK_THROWS_AS(pass_at_k(4, 5, 1), DomainError);
  CHECK_THROWS_AS(pass_at_k(4, 2, 0), DomainError);
  // n - c < k: every subset holds a correct sample.
  CHECK(pass_at_k(4096, 4000, 256) == 1.0);
  CHECK(pass_at_k(4096, 1, 1) == doctest::Approx(1.0 / 4096.0).epsilon(1e-12));
}

TEST_CASE("pass@k equals the exhaustive subset average") {
  for (int n = 1; n <= 12; ++n) {
    for (int c = 0; c <= n; ++c) {
      for (int k = 1; k <= n; ++k) {
        CHECK(std::abs(pass_at_k(n, c, k) - subset_oracle(n, c, k)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("pass@k is monotone in k") {
  for (int n = 1; n <= 64; ++n) {
    for (int c = 0; c <= n; ++c) {
      for (int k = 1; k < n; ++k) CHECK(pass_at_k(n, c, k) <= pass_at_k(n, c, k + 1));
    }
  }
}

TEST_CASE("evaluation of a deterministic valid policy") {
  TokenTreeEnvironment env(2, 2, {{1, 0}});
  TabularPolicy det(env.shape());
  det.logits(0)[1] = 60.0;
  det.logits(env.shape().context_index(Trajectory{1}))[0] = 60.0;
  Rng rng = make_rng(1, 0);
  const std::vector<std::int64_t> ks{1, 4, 16};
  const auto rep = evaluate_policy(det, env, 16, ks, 1e-3, rng);
  CHECK(rep.correct_count == 16);
  for (const auto& [k, v] : rep.pass_at_k) CHECK(v == 1.0);
  CHECK(rep.support_size_at_eps == 1);
  CHECK(rep.mean_trajectory_entropy < 1e-20);
}

TEST_CASE("pass@1 estimate against the exact valid mass") {
  TokenTreeEnvironment env(3, 2, {{0, 0}, {1, 2}, {2, 1}});
  Rng lr = make_rng(7, 0);
  const auto pol = testing::random_policy(env.shape(), lr);
  const auto d = exact_distribution(pol, env);
  double p = 0.0;
  for (auto idx : env.valid_indices()) p += d[idx];
  Rng rng = make_rng(7, 1);
  const std::vector<std::int64_t> ks{1};
  const auto rep = evaluate_policy(pol, env, 4096, ks, 1e-3, rng);
  CHECK(std::abs(rep.pass_at_k.at(1) - p) <= 3.0 * std::sqrt(p * (1.0 - p) / 4096.0));

  Rng again = make_rng(7, 1);
  const auto rep2 = evaluate_policy(pol, env, 4096, ks, 1e-3, again);
  CHECK(rep2.pass_at_k == rep.pass_at_k);
  CHECK(rep2.correct_count == rep.correct_count);
}

TEST_CASE("pass@k averages to the true coverage") {
  TokenTreeEnvironment env(3, 2, {{0, 0}, {2, 1}});
  Rng lr = make_rng(8, 0);
  const auto pol = testing::random_policy(env.shape(), lr);
  const auto d = exact_distribution(pol, env);
  double p = 0.0;
  for (auto idx : env.valid_indices()) p += d[idx];
  const std::int64_t k = 4;
  const double truth = 1.0 - std::pow(1.0 - p, static_cast<double>(k));
  Rng rng = make_rng(8, 1);
  const std::vector<std::int64_t> ks{k};
  const int reps = 4000;
  double m = 0.0;
  double m2 = 0.0;
  for (int i = 0; i < reps; ++i) {
    const double v = evaluate_policy(pol, env, 16, ks, 1e-3, rng).pass_at_k.at(k);
    m += v;
    m2 += v * v;
  }
  m /= reps;
  const double se = std::sqrt((m2 / reps - m * m) / reps);
  CHECK(std::abs(m - truth) <= 3.0 * se);
}

TEST_CASE("support size comes from the exact distribution") {
  TokenTreeEnvironment env(2, 1, {{0}, {1}});
  TabularPolicy p(env.shape(), {std::log(0.9995), std::log(0.0005)});
  Rng rng = make_rng(9, 0);
  const std::vector<std::int64_t> ks{1};
  CHECK(evaluate_policy(p, env, 1, ks, 1e-3, rng).support_size_at_eps == 1);
  CHECK(evaluate_policy(p, env, 1, ks, 1e-4, rng).support_size_at_eps == 2);
}

}  // TEST_SUITE

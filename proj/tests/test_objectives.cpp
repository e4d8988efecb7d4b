#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sage/error.hpp"
#include "sage/objectives.hpp"
#include "sage/theory.hpp"
#include "test_util.hpp"

using namespace sage;
using testing::make_dist;

namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Random point near p on the simplex (Dirichlet-style multiplicative noise).
std::vector<double> perturb(const std::vector<double>& p, Rng& rng, double scale) {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * std::exp(scale * standard_normal(rng));
  const double z = sum(out);
  for (double& x : out) x /= z;
  return out;
}

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> out(n);
  for (double& x : out) x = -std::log(uniform01(rng) + 1e-300);
  const double z = sum(out);
  for (double& x : out) x /= z;
  return out;
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("kl_exact") {
  const auto a = make_dist({0.2, 0.3, 0.5});
  CHECK(kl_exact(a, a) == 0.0);
  CHECK(kl_exact(make_dist({1.0, 0.0}), make_dist({0.5, 0.5})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double expect = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(kl_exact(make_dist({0.5, 0.5}), make_dist({0.9, 0.1})) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect == doctest::Approx(0.5108).epsilon(1e-4));
  CHECK_THROWS_AS(kl_exact(make_dist({0.5, 0.5}), make_dist({1.0, 0.0})), DomainError);
}

TEST_CASE("pseudo-KL") {
  const auto p = make_dist({0.1, 0.6, 0.3});
  CHECK(std::abs(pseudo_kl_exact(p, AnchorWeights{p.probs})) <= 1e-16);
  const double c = 7.5;
  AnchorWeights scaled{{0.1 * c, 0.6 * c, 0.3 * c}};
  CHECK(pseudo_kl_exact(p, scaled) == doctest::Approx(-std::log(c)).epsilon(1e-14));
  const auto ref = make_dist({0.2, 0.2, 0.6});
  const std::vector<double> ones(3, 1.0);
  CHECK(pseudo_kl_exact(p, make_anchor(ref, ones)) == kl_exact(p, ref));
  CHECK_THROWS_AS(pseudo_kl_exact(p, AnchorWeights{{0.1, 0.0, 0.3}}), DomainError);
}

TEST_CASE("decomposition") {
  const auto p = make_dist({0.25, 0.75});
  const auto ref = make_dist({0.4, 0.6});
  const std::vector<double> zero(2, 0.0);
  const auto plain = pseudo_kl_decompose(p, ref, zero);
  CHECK(plain.bonus_part == 0.0);
  CHECK(plain.kl_part == kl_exact(p, ref));
  const std::vector<double> ones(2, 1.0);  // log q = 1, q = e on every single-token path
  CHECK(pseudo_kl_decompose(p, ref, ones).bonus_part == doctest::Approx(1.0).epsilon(1e-15));

  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto inst = random_instance(s, InstanceKind::generic);
    Rng rng = make_rng(s, 11);
    const auto p2 = make_dist(random_simplex(inst.ref.size(), rng));
    std::vector<double> logq(inst.q.size());
    for (std::size_t i = 0; i < logq.size(); ++i) logq[i] = std::log(inst.q[i]);
    const auto parts = pseudo_kl_decompose(p2, inst.ref, logq);
    const double direct = pseudo_kl_exact(p2, make_anchor(inst.ref, inst.q));
    CHECK(std::abs(parts.kl_part - parts.bonus_part - direct) < 1e-10);
  }
}

TEST_CASE("k3 estimate") {
  CHECK(k3_token_estimate(1.0) == 0.0);
  CHECK(k3_token_estimate(std::exp(1.0)) == doctest::Approx(std::exp(1.0) - 2.0).epsilon(1e-15));
  CHECK_THROWS_AS(k3_token_estimate(0.0), DomainError);
  CHECK_THROWS_AS(k3_token_estimate(-2.0), DomainError);
  for (double r : {1e-6, 0.1, 0.999, 1.001, 3.0, 1e6}) CHECK(k3_token_estimate(r) > 0.0);
}

TEST_CASE("k3 Monte Carlo mean against the exact divergence") {
  // Two outcomes, pi = (0.3, 0.7). With a normalized anchor the estimator is
  // unbiased for KL(pi || ref); with an unnormalized q * ref it is biased by
  // E_ref[q] - 1.
  const std::vector<double> pi{0.3, 0.7};
  const auto p = make_dist(pi);
  const auto ref = make_dist({0.6, 0.4});
  Rng rng = make_rng(2024, 0);
  const int n = 100000;
  for (const std::vector<double>& q : {std::vector<double>{1.0, 1.0}, std::vector<double>{1.5, 0.8}}) {
    const auto f = make_anchor(ref, q);
    double m = 0.0;
    double m2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t y = uniform01(rng) < pi[0] ? 0 : 1;
      const double k = k3_token_estimate(f.values[y] / pi[y]);
      m += k;
      m2 += k * k;
    }
    m /= n;
    const double se = std::sqrt((m2 / n - m * m) / n);
    const double bias = sum(f.values) - 1.0;
    const double target = pseudo_kl_exact(p, f) + bias;
    CHECK(std::abs(m - target) <= 3.0 * se);
  }
}

TEST_CASE("reverse-KL stationary solution") {
  const auto ref = make_dist({0.2, 0.5, 0.3});
  const std::vector<double> flat(3, 1.0);
  const auto same = stationary_reverse_kl(ref, flat, 0.7);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same.dist[i] == doctest::Approx(ref[i]).epsilon(1e-14));

  const auto half = make_dist({0.5, 0.5});
  const std::vector<double> r{1.0, 0.0};
  const auto s = stationary_reverse_kl(half, r, 1.0);
  const double e = std::exp(1.0);
  CHECK(s.dist[0] == doctest::Approx(e / (1.0 + e)).epsilon(1e-14));
  CHECK(s.dist[1] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-14));

  const auto cold = stationary_reverse_kl(make_dist({0.999, 0.001}), std::vector<double>{0.0, 1.0}, 1e-3);
  CHECK(cold.dist[1] > 1.0 - 1e-9);
}

TEST_CASE("shaped stationary solution") {
  const auto toy = make_dist({1.0 - 1e-6, 1e-6});
  const std::vector<double> both{1.0, 1.0};
  const std::vector<double> q{1.0, 121.0};
  const auto s = stationary_sage(toy, both, 0.05, q);
  CHECK(s.dist[1] == doctest::Approx(1e-6 * 121.0 / 1.00012).epsilon(1e-12));
  CHECK(s.dist[1] == doctest::Approx(1.2099e-4).epsilon(1e-4));

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = random_instance(seed, InstanceKind::generic);
    const std::vector<double> ones(inst.ref.size(), 1.0);
    const auto a = stationary_sage(inst.ref, inst.rewards, inst.beta, ones);
    const auto b = stationary_reverse_kl(inst.ref, inst.rewards, inst.beta);
    std::vector<double> scaled = inst.q;
    for (double& x : scaled) x *= 37.0;
    const auto c = stationary_sage(inst.ref, inst.rewards, inst.beta, inst.q);
    const auto d = stationary_sage(inst.ref, inst.rewards, inst.beta, scaled);
    double eq = 0.0;
    for (std::size_t i = 0; i < b.dist.size(); ++i) eq += b.dist[i] * inst.q[i];
    for (std::size_t i = 0; i < a.dist.size(); ++i) {
      CHECK(std::abs(a.dist[i] - b.dist[i]) <= 1e-12);
      CHECK(std::abs(c.dist[i] - d.dist[i]) <= 1e-12);
      CHECK(std::abs(c.dist[i] - b.dist[i] * inst.q[i] / eq) <= 1e-10);
    }
  }
  CHECK_THROWS_AS(stationary_sage(toy, both, 0.05, std::vector<double>{1.0, 0.0}), DomainError);
}

TEST_CASE("shaped stationary solution maximizes the objective") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto inst = random_instance(seed, InstanceKind::generic);
    const auto sol = stationary_sage(inst.ref, inst.rewards, inst.beta, inst.q);
    const auto anchor = make_anchor(inst.ref, inst.q);
    const double best = objective_value(sol.dist, inst.rewards, inst.beta, anchor);
    Rng rng = make_rng(seed, 5);
    for (int k = 0; k < 100; ++k) {
      const auto other = make_dist(perturb(sol.dist.probs, rng, 0.3));
      CHECK(objective_value(other, inst.rewards, inst.beta, anchor) <= best + 1e-12);
    }
  }
}

TEST_CASE("objective value limits") {
  const auto ref = make_dist({0.3, 0.7});
  const std::vector<double> r{1.0, 0.0};
  const std::vector<double> ones(2, 1.0);
  const auto anchor = make_anchor(ref, ones);
  CHECK(objective_value(ref, r, 0.05, anchor) == doctest::Approx(0.3).epsilon(1e-15));
  const auto p = make_dist({0.9, 0.1});
  CHECK(objective_value(p, r, 1e-9, anchor) == doctest::Approx(0.9).epsilon(1e-8));
}

TEST_CASE("forward-KL stationary solution") {
  const auto half = make_dist({0.5, 0.5});
  const auto s = stationary_forward_kl(half, std::vector<double>{1.0, 0.0}, 1.0);
  // Normalization 0.5/(l - 1) + 0.5/l = 1 gives l^2 - 2l + 0.5 = 0.
  const double lambda = (2.0 + std::sqrt(4.0 - 2.0)) / 2.0;
  REQUIRE(s.lambda.has_value());
  CHECK(std::abs(*s.lambda - lambda) <= 1e-9);
  CHECK(std::abs(*s.lambda - (1.0 + 1.0 / std::sqrt(2.0))) <= 1e-9);
  CHECK(s.dist[0] == doctest::Approx(0.5 / (lambda - 1.0)).epsilon(1e-9));
  CHECK(s.dist[1] == doctest::Approx(0.29289).epsilon(1e-4));

  const auto ref = make_dist({0.1, 0.6, 0.3});
  const auto z = stationary_forward_kl(ref, std::vector<double>{0.0, 0.0, 0.0}, 0.4);
  CHECK(*z.lambda == doctest::Approx(0.4).epsilon(1e-10));
  for (std::size_t i = 0; i < 3; ++i) CHECK(z.dist[i] == doctest::Approx(ref[i]).epsilon(1e-10));

  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto inst = random_instance(seed, InstanceKind::generic);
    const auto f = stationary_forward_kl(inst.ref, inst.rewards, inst.beta);
    CHECK(std::abs(sum(f.dist.probs) - 1.0) < 1e-10);
    CHECK(*f.lambda > 1.0);
  }
}

TEST_CASE("entropy-regularized stationary solution") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = random_instance(seed, InstanceKind::generic);
    const auto a0 = stationary_entropy_reg(inst.ref, inst.rewards, 0.0, inst.beta);
    const auto rk = stationary_reverse_kl(inst.ref, inst.rewards, inst.beta);
    for (std::size_t i = 0; i < rk.dist.size(); ++i) CHECK(std::abs(a0.dist[i] - rk.dist[i]) <= 1e-12);

    const auto hot = stationary_entropy_reg(inst.ref, inst.rewards, 1e6, 1.0);
    const double u = 1.0 / static_cast<double>(inst.ref.size());
    for (double x : hot.dist.probs) CHECK(std::abs(x - u) < 1e-3);

    const std::vector<double> flat(inst.ref.size(), 1.0);
    const double alpha = 0.7;
    const auto t = stationary_entropy_reg(inst.ref, flat, alpha, inst.beta);
    std::vector<double> tempered(inst.ref.size());
    for (std::size_t i = 0; i < tempered.size(); ++i) {
      tempered[i] = std::pow(inst.ref[i], inst.beta / (alpha + inst.beta));
    }
    const double z = sum(tempered);
    for (std::size_t i = 0; i < tempered.size(); ++i) {
      CHECK(t.dist[i] == doctest::Approx(tempered[i] / z).epsilon(1e-10));
    }
  }
}

TEST_CASE("entropy-regularized closed form beats random simplex points") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = random_instance(seed, InstanceKind::generic);
    const double alpha = 0.3;
    const auto sol = stationary_entropy_reg(inst.ref, inst.rewards, alpha, inst.beta);
    const double best = entropy_reg_objective_value(sol.dist, inst.ref, inst.rewards, alpha, inst.beta);
    Rng rng = make_rng(seed, 9);
    for (int k = 0; k < 1000; ++k) {
      const auto other = make_dist(random_simplex(inst.ref.size(), rng));
      CHECK(entropy_reg_objective_value(other, inst.ref, inst.rewards, alpha, inst.beta) <= best + 1e-12);
    }
  }
}

TEST_CASE("off-target reweighting on the worked case") {
  const auto half = make_dist({0.5, 0.5});
  const std::vector<double> r{1.0, 0.0};
  const std::vector<double> q{1.0, 1.0};
  const auto w = offtarget_reweight(half, r, 1.0, q);
  const double lambda = 1.0 + 1.0 / std::sqrt(2.0);
  CHECK(w.lambda == doctest::Approx(lambda).epsilon(1e-9));
  CHECK(w.w[0] == doctest::Approx(std::exp(1.0) * (lambda - 1.0)).epsilon(1e-9));
  CHECK(w.w[1] == doctest::Approx(lambda).epsilon(1e-9));
  CHECK(w.w[0] == doctest::Approx(1.9221).epsilon(1e-4));
  CHECK(w.separation_holds);
  CHECK(w.sage_offmass == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-12));
  CHECK(w.fkl_offmass == doctest::Approx(0.5 / lambda).epsilon(1e-9));
  CHECK(w.sage_offmass < w.fkl_offmass);
}

TEST_CASE("off-target reweighting with a uniform guide at small beta") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto inst = random_instance(seed, InstanceKind::generic);
    const std::vector<double> q(inst.ref.size(), 2.5);
    const auto w = offtarget_reweight(inst.ref, inst.rewards, 0.05, q);
    CHECK(w.separation_holds);
    CHECK(w.sage_offmass < w.fkl_offmass);
    if (w.qcond_holds) CHECK(w.separation_holds);
  }
}

TEST_CASE("off-target reweighting degenerate valid sets") {
  const auto ref = make_dist({0.5, 0.5});
  const std::vector<double> q{1.0, 1.0};
  CHECK(offtarget_reweight(ref, std::vector<double>{1.0, 1.0}, 1.0, q).degenerate);
  CHECK(offtarget_reweight(ref, std::vector<double>{0.0, 0.0}, 1.0, q).degenerate);
}

}  // TEST_SUITE

#include <doctest.h>

#include <cmath>

#include "sage/error.hpp"
#include "sage/theory.hpp"
#include "test_util.hpp"

using namespace sage;
using testing::make_dist;

TEST_SUITE("theory") {

TEST_CASE("empirical support") {
  const auto d = make_dist({0.5, 0.3, 0.2});
  const std::vector<std::uint64_t> valid{0, 2};
  CHECK(empirical_support(d, 0.25, valid) == std::vector<std::size_t>{0});
  CHECK(empirical_support(d, 1.0, valid).empty());
  CHECK(empirical_support(d, 5.0, valid).empty());
  CHECK(empirical_support(d, 1e-300, valid) == std::vector<std::size_t>{0, 2});
  CHECK(empirical_support(d, 0.2, valid) == std::vector<std::size_t>{0});  // strict
  CHECK_THROWS_AS(empirical_support(d, 0.0, valid), DomainError);

  Rng rng = make_rng(1, 0);
  for (int i = 0; i < 100; ++i) {
    const auto inst = random_instance(static_cast<std::uint64_t>(i), InstanceKind::generic);
    std::vector<std::uint64_t> vi;
    for (std::size_t k = 0; k < inst.rewards.size(); ++k) {
      if (inst.rewards[k] == 1.0) vi.push_back(k);
    }
    const double e1 = uniform01(rng) * 0.3 + 1e-6;
    const double e2 = e1 + uniform01(rng) * 0.3;
    const auto big = empirical_support(inst.ref, e1, vi);
    for (auto idx : empirical_support(inst.ref, e2, vi)) {
      CHECK(std::find(big.begin(), big.end(), idx) != big.end());
    }
  }
}

TEST_CASE("toy example") {
  const auto toy = run_toy_example();
  const auto& e = toy.expansion;
  CHECK(e.q_star == 121.0);
  CHECK(toy.q_common == 1.0);
  CHECK(e.expectation_q == (1.0 - 1e-6) * 1.0 + 1e-6 * 121.0);
  CHECK(e.expectation_q == 1.00012);
  CHECK(e.rhs_threshold == doctest::Approx(100.012).epsilon(1e-7));
  CHECK(e.condition_holds);
  CHECK(e.sage_prob_star == doctest::Approx(1.2099e-4).epsilon(1e-4));
  CHECK(e.sage_prob_star == doctest::Approx(1e-6 * 121.0 / 1.00012).epsilon(1e-7));
  CHECK(e.membership);
  CHECK(toy.trace.find("121") != std::string::npos);
}

TEST_CASE("expansion report is self-consistent") {
  for (std::uint64_t s = 0; s < 300; ++s) {
    const auto inst = random_instance(s, InstanceKind::expansion);
    const auto r = check_expansion_condition(inst.ref, inst.rewards, inst.beta, inst.q,
                                             inst.y_star, inst.epsilon);
    CHECK(std::abs(r.rhs_threshold - inst.epsilon / r.rlvr_prob_star * r.expectation_q) <=
          1e-12 * r.rhs_threshold);
    if (r.condition_holds) CHECK(r.membership);
    CHECK(r.identity_residual <= 1e-10);
  }
}

TEST_CASE("a constant guide cannot expand the support") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto inst = random_instance(s, InstanceKind::generic);
    std::fill(inst.q.begin(), inst.q.end(), 1.0);
    const auto rl = stationary_reverse_kl(inst.ref, inst.rewards, inst.beta);
    const double eps = rl.dist[inst.y_star] * 1.5;
    if (!(eps < 1.0)) continue;
    const auto r = check_expansion_condition(inst.ref, inst.rewards, inst.beta, inst.q, inst.y_star, eps);
    CHECK_FALSE(r.condition_holds);
    CHECK_FALSE(r.membership);
  }
}

TEST_CASE("y* must be valid") {
  const auto ref = make_dist({0.5, 0.5});
  const std::vector<double> r{1.0, 0.0};
  const std::vector<double> q{1.0, 1.0};
  CHECK_THROWS_AS(check_expansion_condition(ref, r, 1.0, q, 1, 0.1), DomainError);
}

TEST_CASE("off-target comparison") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto inst = random_instance(s, InstanceKind::offtarget);
    const auto rep = offtarget_comparison(inst.ref, inst.rewards, inst.beta, inst.q);
    CHECK(rep.separation_implication_ok);
    CHECK(rep.qcond_implication_ok);
    if (rep.reweight.separation_holds) CHECK(rep.inequality_holds);
  }
  // Guide piled on the invalid outcome: separation fails and nothing is claimed.
  const auto half = make_dist({0.5, 0.5});
  const std::vector<double> r{1.0, 0.0};
  const std::vector<double> q{1.0, 1e6};
  const auto bad = offtarget_comparison(half, r, 1.0, q);
  CHECK_FALSE(bad.reweight.separation_holds);
  CHECK(bad.separation_implication_ok);
}

TEST_CASE("support preservation under reverse KL") {
  RareModeSpec spec;
  spec.rare_mass = 1e-6;
  spec.branch_entropy_target = 5.0;
  const auto rm = make_rare_mode_env(spec, 2);
  TrainerConfig cfg;
  cfg.group_size = 8;
  cfg.steps = 200;
  const auto rep = support_preservation_sim(cfg, rm, 1e-4, 20);
  CHECK(rep.trials_sampled == 0);
  CHECK(rep.trials_in_support == 0);
  for (const auto& t : rep.trials) CHECK(t.final_prob <= 1e-4);

  cfg.steps = 0;
  const auto none = support_preservation_sim(cfg, rm, 1e-4, 3);
  for (const auto& t : none.trials) CHECK(t.final_prob == doctest::Approx(1e-6).epsilon(1e-9));
}

TEST_CASE("the branch guide lifts a valid rare mode into the support") {
  RareModeSpec spec;
  spec.rare_mass = 1e-3;
  spec.branch_mass = 0.01;
  spec.branch_entropy_target = 3.0;
  spec.common_continuation = 0.7;
  spec.branch_valid = true;
  const double eps = 1e-2;
  const auto rm = make_rare_mode_env(spec, 11);
  TrainerConfig cfg;
  cfg.steps = 1000;
  cfg.guide.family = GuideFamily::branch;
  cfg.guide.gamma = 30.0;
  cfg.seed = 100;
  const auto rev = support_preservation_sim(cfg, rm, eps, 20);
  cfg.kl_mode = KlMode::sage;
  const auto shaped = support_preservation_sim(cfg, rm, eps, 20);
  CHECK(rev.trials_in_support == 0);
  CHECK(shaped.trials_in_support > 10);
}

TEST_CASE("instance generator") {
  for (auto kind : {InstanceKind::expansion, InstanceKind::offtarget, InstanceKind::generic}) {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const auto a = random_instance(s, kind);
      const auto b = random_instance(s, kind);
      CHECK(a.ref.probs == b.ref.probs);
      CHECK(a.q == b.q);
      double valid = 0.0;
      for (double r : a.rewards) valid += r;
      CHECK(valid >= 1.0);
      CHECK(valid < static_cast<double>(a.rewards.size()));
      CHECK(a.rewards[a.y_star] == 1.0);
      for (double x : a.q) CHECK(x > 0.0);
    }
  }
}

}  // TEST_SUITE

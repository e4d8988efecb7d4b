#include "sage/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sage/error.hpp"
#include "sage/guides.hpp"
#include "sage/rng.hpp"

namespace sage {

std::vector<std::size_t> empirical_support(const TrajectoryDistribution& dist, double epsilon,
                                           std::span<const std::uint64_t> valid) {
  if (!(epsilon > 0.0)) throw DomainError("empirical_support needs epsilon > 0");
  std::vector<std::size_t> out;
  for (auto idx : valid) {
    if (idx >= dist.size()) throw DomainError("valid index outside the distribution");
    if (dist.probs[idx] > epsilon) out.push_back(static_cast<std::size_t>(idx));
  }
  return out;
}

ExpansionReport check_expansion_condition(const TrajectoryDistribution& ref,
                                          std::span<const double> rewards, double beta,
                                          std::span<const double> q_values, std::size_t y_star,
                                          double epsilon) {
  if (y_star >= rewards.size()) throw DomainError("y* index out of range");
  if (rewards[y_star] != 1.0) throw DomainError("y* must be reward-valid");
  if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");

  const auto rlvr = stationary_reverse_kl(ref, rewards, beta);
  const auto sage = stationary_sage(ref, rewards, beta, q_values);

  ExpansionReport rep;
  rep.q_star = q_values[y_star];
  for (std::size_t i = 0; i < rlvr.dist.size(); ++i) {
    rep.expectation_q += rlvr.dist.probs[i] * q_values[i];
  }
  rep.rlvr_prob_star = rlvr.dist.probs[y_star];
  rep.rhs_threshold = rep.rlvr_prob_star > 0.0
                          ? epsilon / rep.rlvr_prob_star * rep.expectation_q
                          : std::numeric_limits<double>::infinity();
  rep.condition_holds = rep.q_star > rep.rhs_threshold;
  rep.sage_prob_star = sage.dist.probs[y_star];
  rep.membership = rep.sage_prob_star > epsilon;
  for (std::size_t i = 0; i < rlvr.dist.size(); ++i) {
    const double via_identity = rlvr.dist.probs[i] * q_values[i] / rep.expectation_q;
    rep.identity_residual =
        std::max(rep.identity_residual, std::abs(sage.dist.probs[i] - via_identity));
  }
  return rep;
}

ToyReport run_toy_example() {
  ToyReport toy;
  toy.ref_star = 1e-6;
  toy.entropies_common = {0.1, 0.2};
  toy.entropies_star = {5.0, 0.3};
  toy.gamma = 30.0;
  toy.tau = 1.0;
  toy.epsilon = 1e-4;
  toy.beta = 0.05;  // both trajectories are valid, so beta cancels

  const auto g_common = evaluate_guide_branch(toy.entropies_common, toy.gamma, toy.tau);
  const auto g_star = evaluate_guide_branch(toy.entropies_star, toy.gamma, toy.tau);
  double q_common = 1.0;
  for (double f : g_common.factors) q_common *= f;
  double q_star = 1.0;
  for (double f : g_star.factors) q_star *= f;
  toy.q_common = q_common;

  TrajectoryDistribution ref;
  ref.probs = {1.0 - toy.ref_star, toy.ref_star};
  const std::vector<double> rewards{1.0, 1.0};
  const std::vector<double> q{q_common, q_star};
  toy.expansion = check_expansion_condition(ref, rewards, toy.beta, q, 1, toy.epsilon);

  const auto& e = toy.expansion;
  std::ostringstream os;
  os.precision(12);
  os << "toy instance: pi_ref(y1) = " << ref.probs[0] << ", pi_ref(y*) = " << ref.probs[1] << "\n"
     << "branch guide: tau = " << toy.tau << ", gamma = " << toy.gamma << "\n"
     << "entropies y1 = (" << toy.entropies_common[0] << ", " << toy.entropies_common[1]
     << "), y* = (" << toy.entropies_star[0] << ", " << toy.entropies_star[1] << ")\n"
     << "q(x,y1) = " << q_common << "\n"
     << "q(x,y*) = " << e.q_star << "\n"
     << "E_RLVR[q] = " << e.expectation_q << "\n"
     << "threshold eps / pi_RLVR(y*) * E[q] = " << e.rhs_threshold << "\n"
     << "condition q(x,y*) > threshold: " << (e.condition_holds ? "satisfied" : "violated") << "\n"
     << "pi_SAGE(y*) = " << e.sage_prob_star << " (eps = " << toy.epsilon << ")\n"
     << "y* in supp_eps(pi_SAGE): " << (e.membership ? "yes" : "no") << "\n";
  toy.trace = os.str();
  return toy;
}

OfftargetReport offtarget_comparison(const TrajectoryDistribution& ref,
                                     std::span<const double> rewards, double beta,
                                     std::span<const double> q_values) {
  OfftargetReport rep;
  rep.reweight = offtarget_reweight(ref, rewards, beta, q_values);
  const auto& w = rep.reweight;
  rep.inequality_holds = w.sage_offmass < w.fkl_offmass;
  if (w.degenerate) return rep;
  rep.separation_implication_ok = !w.separation_holds || rep.inequality_holds;
  rep.qcond_implication_ok = !w.qcond_holds || w.separation_holds;
  return rep;
}

PreservationReport support_preservation_sim(const TrainerConfig& cfg, const RareModeEnv& rm,
                                            double epsilon, int trials, kernels::Exec exec) {
  if (trials < 0) throw DomainError("trials must be >= 0");
  cfg.validate();
  PreservationReport rep;
  rep.epsilon = epsilon;
  rep.initial_prob = trajectory_prob(rm.reference, rm.env, rm.y_star);
  rep.trials.resize(static_cast<std::size_t>(trials));

  auto run_trial = [&](int t) {
    TrainerConfig c = cfg;
    c.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(t));
    c.eval.every = 0;
    PreservationTrial out;
    out.seed = c.seed;
    TrainState state = make_train_state(rm.reference, c.seed);
    for (std::int64_t s = 0; s < c.steps; ++s) {
      const auto res = grpo_step(state, rm.env, rm.reference, c);
      for (const auto& r : res.rollouts) {
        if (r.tokens == rm.y_star) ++out.times_sampled;
      }
    }
    out.final_prob = trajectory_prob(state.policy, rm.env, rm.y_star);
    out.in_support = out.final_prob > epsilon;
    rep.trials[static_cast<std::size_t>(t)] = out;
  };

  if (exec == kernels::Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < trials; ++t) run_trial(t);
  } else {
    for (int t = 0; t < trials; ++t) run_trial(t);
  }

  for (const auto& t : rep.trials) {
    rep.trials_sampled += t.times_sampled > 0;
    rep.trials_in_support += t.in_support;
  }
  rep.fraction_in_support =
      trials > 0 ? static_cast<double>(rep.trials_in_support) / trials : 0.0;
  return rep;
}

namespace {

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * uniform01(rng));
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

TheoryInstance random_instance(std::uint64_t seed, InstanceKind kind) {
  Rng rng = make_rng(seed, 0);
  TheoryInstance inst;
  inst.seed = seed;
  inst.vocab_size = uniform_int(rng, 2, 4);
  inst.max_depth = uniform_int(rng, 1, 3);
  const TreeShape shape(inst.vocab_size, inst.max_depth);
  const std::uint64_t n = shape.num_trajectories();

  // Larger logit scales produce the very small reference masses the
  // expansion condition is about.
  const double scale = kind == InstanceKind::expansion ? 0.5 + 5.5 * uniform01(rng)
                                                       : 0.5 + 2.5 * uniform01(rng);
  inst.ref_logits.resize(shape.num_contexts() * static_cast<std::size_t>(inst.vocab_size));
  for (double& l : inst.ref_logits) l = scale * standard_normal(rng);
  const TabularPolicy ref_policy(shape, inst.ref_logits);

  // Rejection keeps the valid set proper and nonempty.
  const double p_valid = 0.1 + 0.8 * uniform01(rng);
  std::vector<Trajectory> valid;
  do {
    valid.clear();
    for (std::uint64_t i = 0; i < n; ++i) {
      if (uniform01(rng) < p_valid) valid.push_back(shape.trajectory_at(i));
    }
  } while (valid.empty() || valid.size() == n);

  const TokenTreeEnvironment env(inst.vocab_size, inst.max_depth, valid);
  inst.ref = exact_distribution(ref_policy, env);
  inst.rewards = env.reward_vector();
  const auto& vidx = env.valid_indices();
  inst.y_star = static_cast<std::size_t>(vidx[static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<int>(vidx.size()) - 1))]);

  inst.q.resize(n);
  switch (kind) {
    case InstanceKind::expansion:
    case InstanceKind::generic: {
      inst.beta = log_uniform(rng, 0.05, 5.0);
      inst.epsilon = log_uniform(rng, 1e-4, 0.5);
      const double s = 2.0 * uniform01(rng);
      for (double& q : inst.q) q = std::exp(s * standard_normal(rng));
      if (kind == InstanceKind::expansion && uniform01(rng) < 0.5) {
        inst.q[inst.y_star] *= std::exp(8.0 * uniform01(rng));
      }
      break;
    }
    case InstanceKind::offtarget: {
      inst.beta = 0.05;
      inst.epsilon = log_uniform(rng, 1e-4, 0.5);
      for (std::uint64_t i = 0; i < n; ++i) {
        inst.q[i] = inst.rewards[i] == 1.0 ? std::exp(2.0 * uniform01(rng))
                                          : std::exp(-2.0 * uniform01(rng));
      }
      break;
    }
  }
  return inst;
}

}  // namespace sage

#include "sage/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sage/error.hpp"
#include "sage/objectives.hpp"

namespace sage {

namespace {

// Seed stream reserved for evaluation draws, disjoint from training.
constexpr std::uint64_t kEvalStream = 0x65'76'61'6cULL;
constexpr double kInf = std::numeric_limits<double>::infinity();

void require_finite_positive(double v, const char* key) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be a finite positive number");
}

}  // namespace

std::string to_string(KlMode mode) {
  switch (mode) {
    case KlMode::reverse: return "reverse";
    case KlMode::forward: return "forward";
    case KlMode::none: return "none";
    case KlMode::sage: return "sage";
  }
  return "?";
}

KlMode parse_kl_mode(const std::string& name) {
  if (name == "reverse") return KlMode::reverse;
  if (name == "forward") return KlMode::forward;
  if (name == "none") return KlMode::none;
  if (name == "sage") return KlMode::sage;
  throw ConfigError("kl_mode", "unknown mode '" + name + "' (reverse, forward, none, sage)");
}

void TrainerConfig::validate() const {
  if (kl_mode != KlMode::none) require_finite_positive(beta, "beta");
  if (group_size < 2) throw ConfigError("group_size", "must be at least 2");
  if (steps < 0) throw ConfigError("steps", "must be >= 0");
  require_finite_positive(learning_rate, "learning_rate");
  if (!(clip_low >= 0.0 && clip_low < 1.0)) throw ConfigError("clip_low", "must lie in [0, 1)");
  if (!(clip_high >= clip_low)) throw ConfigError("clip_high", "must be >= clip_low");
  if (!(adv_std_floor >= 0.0)) throw ConfigError("adv_std_floor", "must be >= 0");
  if (eval.every < 0) throw ConfigError("eval.every", "must be >= 0");
  if (eval.every > 0) {
    if (eval.n_samples < 1) throw ConfigError("eval.n_samples", "must be >= 1");
    for (auto k : eval.ks) {
      if (k < 1 || k > eval.n_samples) throw ConfigError("eval.ks", "every k must lie in [1, n_samples]");
    }
    if (!(eval.epsilon > 0.0)) throw ConfigError("eval.epsilon", "must be positive");
  }
  guide.validate();
}

std::vector<double>& SparseGradient::row(std::size_t context, int vocab_size) {
  auto [it, inserted] = rows.try_emplace(context);
  if (inserted) it->second.assign(static_cast<std::size_t>(vocab_size), 0.0);
  return it->second;
}

double SparseGradient::l2_norm() const {
  double s = 0.0;
  for (const auto& [ctx, g] : rows) {
    for (double v : g) s += v * v;
  }
  return std::sqrt(s);
}

std::vector<double> SparseGradient::to_dense(const TreeShape& shape) const {
  const auto v = static_cast<std::size_t>(shape.vocab_size());
  std::vector<double> out(shape.num_contexts() * v, 0.0);
  for (const auto& [ctx, g] : rows) std::copy(g.begin(), g.end(), out.begin() + ctx * v);
  return out;
}

TrainState make_train_state(const TabularPolicy& initial, std::uint64_t seed) {
  return TrainState{initial, initial, 0, make_rng(seed, 0)};
}

std::vector<Rollout> sample_group(const TabularPolicy& snapshot, const TokenTreeEnvironment& env,
                                  const TrainerConfig& cfg, const GuideParams& params, Rng& rng) {
  // Only the sage penalty consumes guide factors; other modes keep q = 1.
  const bool use_guide = cfg.kl_mode == KlMode::sage;
  std::vector<Rollout> group;
  group.reserve(static_cast<std::size_t>(cfg.group_size));
  for (int i = 0; i < cfg.group_size; ++i) {
    auto s = sample_trajectory(snapshot, env, rng);
    Rollout r;
    r.reward = env.reward(s.tokens);
    r.tokens = std::move(s.tokens);
    r.records = std::move(s.records);
    if (use_guide) {
      r.guide = evaluate_guide(cfg.guide, params, r.records, rng);
    } else {
      r.guide.factors.assign(r.records.size(), 1.0);
    }
    group.push_back(std::move(r));
  }
  return group;
}

std::vector<double> group_advantages(std::span<const double> rewards, double std_floor,
                                     bool normalize) {
  std::vector<double> adv(rewards.begin(), rewards.end());
  if (!normalize) return adv;
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = sd > 0.0 ? (a - mean) / (sd + std_floor) : 0.0;
  return adv;
}

LossTerms surrogate_loss(const TabularPolicy& current, const TabularPolicy& reference,
                         std::span<const Rollout> rollouts, std::span<const double> advantages,
                         const TrainerConfig& cfg) {
  if (rollouts.size() != advantages.size()) throw DomainError("one advantage per rollout required");
  LossTerms out;
  const int V = current.vocab_size();
  std::size_t n_tokens = 0;
  for (const auto& r : rollouts) n_tokens += r.records.size();
  if (n_tokens == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n_tokens);

  std::vector<double> pi(static_cast<std::size_t>(V));
  std::vector<double> ref(static_cast<std::size_t>(V));
  double surrogate = 0.0;
  double penalty = 0.0;

  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const auto& roll = rollouts[i];
    const double a = advantages[i];
    for (std::size_t t = 0; t < roll.records.size(); ++t) {
      const auto& rec = roll.records[t];
      const auto v = static_cast<std::size_t>(rec.token);
      current.probs_into(rec.context, pi);
      const double rho = pi[v] / rec.prob;  // rec.prob is the snapshot probability

      // d(loss)/d(logits) = coeff * (e_v - pi) + extra, accumulated below.
      double coeff = 0.0;
      const double lo = cfg.clip ? 1.0 - cfg.clip_low : -kInf;
      const double hi = cfg.clip ? 1.0 + cfg.clip_high : kInf;
      const double clipped = std::clamp(rho, lo, hi);
      surrogate += std::min(rho * a, clipped * a);
      const bool active = a >= 0.0 ? rho <= hi : rho >= lo;
      if (active) coeff -= a * rho * inv_n;

      bool forward_row = false;
      switch (cfg.kl_mode) {
        case KlMode::none: break;
        case KlMode::reverse:
        case KlMode::sage: {
          const double qt = cfg.kl_mode == KlMode::sage ? roll.guide.factors[t] : 1.0;
          const double ratio = qt * reference.prob(rec.context, rec.token) / pi[v];
          penalty += ratio - std::log(ratio) - 1.0;
          coeff += cfg.beta * (1.0 - ratio) * inv_n;
          break;
        }
        case KlMode::forward: {
          reference.probs_into(rec.context, ref);
          double kl = 0.0;
          for (std::size_t u = 0; u < ref.size(); ++u) {
            if (ref[u] > 0.0) kl += ref[u] * (std::log(ref[u]) - std::log(pi[u]));
          }
          penalty += kl;
          forward_row = true;
          break;
        }
      }

      auto& g = out.gradient.row(rec.context, V);
      if (coeff != 0.0) {
        for (std::size_t u = 0; u < g.size(); ++u) g[u] -= coeff * pi[u];
        g[v] += coeff;
      }
      if (forward_row) {
        const double c = cfg.beta * inv_n;
        for (std::size_t u = 0; u < g.size(); ++u) g[u] += c * (pi[u] - ref[u]);
      }
    }
  }
  out.kl_value = penalty * inv_n;
  out.loss = -surrogate * inv_n + (cfg.kl_mode == KlMode::none ? 0.0 : cfg.beta * out.kl_value);
  return out;
}

StepResult grpo_step(TrainState& state, const TokenTreeEnvironment& env,
                     const TabularPolicy& reference, const TrainerConfig& cfg) {
  const GuideParams params = resolve_guide_params(cfg.guide, state.step, cfg.steps);
  state.old_policy = state.policy;

  StepResult res;
  res.rollouts = sample_group(state.old_policy, env, cfg, params, state.rng);
  std::vector<double> rewards;
  rewards.reserve(res.rollouts.size());
  for (const auto& r : res.rollouts) rewards.push_back(r.reward);
  res.advantages = group_advantages(rewards, cfg.adv_std_floor, cfg.normalize_advantages);
  res.metrics.zero_advantage =
      std::all_of(res.advantages.begin(), res.advantages.end(), [](double a) { return a == 0.0; });

  // Score-function term for the E[log q] part of the pseudo-KL: the per-token
  // k3 penalty only anchors toward q * ref locally and never credits the
  // choices that lead into high-q regions.
  if (cfg.kl_mode == KlMode::sage && cfg.guide_bonus && cfg.guide.family != GuideFamily::constant) {
    double mean_b = 0.0;
    for (const auto& r : res.rollouts) mean_b += r.guide.log_product;
    mean_b /= static_cast<double>(res.rollouts.size());
    for (std::size_t i = 0; i < res.rollouts.size(); ++i) {
      res.advantages[i] += cfg.beta * (res.rollouts[i].guide.log_product - mean_b);
    }
  }

  const LossTerms terms = surrogate_loss(state.policy, reference, res.rollouts, res.advantages, cfg);
  for (const auto& [ctx, g] : terms.gradient.rows) {
    auto row = state.policy.logits(ctx);
    for (std::size_t u = 0; u < g.size(); ++u) row[u] -= cfg.learning_rate * g[u];
  }

  auto& m = res.metrics;
  m.step = state.step;
  double reward_sum = 0.0;
  double entropy_sum = 0.0;
  std::size_t n_tokens = 0;
  for (const auto& r : res.rollouts) {
    reward_sum += r.reward;
    for (const auto& rec : r.records) entropy_sum += rec.entropy;
    n_tokens += r.records.size();
  }
  m.mean_train_reward = reward_sum / static_cast<double>(res.rollouts.size());
  m.mean_rollout_entropy = n_tokens ? entropy_sum / static_cast<double>(n_tokens) : 0.0;
  m.kl_value = terms.kl_value;
  m.grad_norm = terms.gradient.l2_norm();
  ++state.step;
  return res;
}

double exact_objective(const TabularPolicy& policy, const TokenTreeEnvironment& env,
                       const TabularPolicy& reference, double beta, KlMode mode,
                       std::span<const double> q_values) {
  const auto p = exact_distribution(policy, env);
  const auto rewards = env.reward_vector();
  double er = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) er += p.probs[i] * rewards[i];
  if (mode == KlMode::none) return er;
  const auto ref = exact_distribution(reference, env);
  switch (mode) {
    case KlMode::reverse: return er - beta * kl_exact(p, ref);
    case KlMode::forward: return er - beta * kl_exact(ref, p);
    case KlMode::sage:
      if (q_values.size() != p.size()) throw DomainError("sage objective needs one q per trajectory");
      return er - beta * pseudo_kl_exact(p, make_anchor(ref, q_values));
    case KlMode::none: break;
  }
  return er;
}

std::vector<double> exact_policy_gradient(const TabularPolicy& policy,
                                          const TokenTreeEnvironment& env,
                                          const TabularPolicy& reference, double beta,
                                          KlMode mode, std::span<const double> q_values) {
  const auto& shape = policy.shape();
  const auto p = exact_distribution(policy, env);
  const auto rewards = env.reward_vector();
  if (mode == KlMode::sage && q_values.size() != p.size()) {
    throw DomainError("sage gradient needs one q per trajectory");
  }
  TrajectoryDistribution ref;
  if (mode != KlMode::none) ref = exact_distribution(reference, env);

  // grad J = sum_y w(y) * grad log pi(y); grad log pi(y) touches the rows on
  // y's path with e_{y_t} - pi(.|c_t). Accumulate w on the taken token and
  // the total weight per row, then subtract total * pi once per row.
  const auto V = static_cast<std::size_t>(shape.vocab_size());
  std::vector<double> grad(shape.num_contexts() * V, 0.0);
  std::vector<double> row_weight(shape.num_contexts(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    double w = 0.0;
    switch (mode) {
      case KlMode::none: w = p.probs[i] * rewards[i]; break;
      case KlMode::reverse:
      case KlMode::sage: {
        if (p.probs[i] <= 0.0) break;
        double lr = std::log(p.probs[i]) - std::log(ref.probs[i]);
        if (mode == KlMode::sage) lr -= std::log(q_values[i]);
        // The "+1" of d/dp (p log p) integrates to zero against the score.
        w = p.probs[i] * (rewards[i] - beta * lr);
        break;
      }
      case KlMode::forward: w = p.probs[i] * rewards[i] + beta * ref.probs[i]; break;
    }
    if (w == 0.0) continue;
    const auto y = shape.trajectory_at(i);
    const auto chain = shape.context_chain(y);
    for (std::size_t t = 0; t < y.size(); ++t) {
      grad[chain[t] * V + static_cast<std::size_t>(y[t])] += w;
      row_weight[chain[t]] += w;
    }
  }
  for (std::size_t c = 0; c < shape.num_contexts(); ++c) {
    if (row_weight[c] == 0.0) continue;
    const auto pi = policy.probs(c);
    for (std::size_t u = 0; u < V; ++u) grad[c * V + u] -= row_weight[c] * pi[u];
  }
  return grad;
}

TrainResult train(const TrainerConfig& cfg, const TokenTreeEnvironment& env,
                  const TabularPolicy& reference) {
  return train(cfg, env, reference, reference);
}

TrainResult train(const TrainerConfig& cfg, const TokenTreeEnvironment& env,
                  const TabularPolicy& reference, const TabularPolicy& initial) {
  cfg.validate();
  if (!(reference.shape() == env.shape()) || !(initial.shape() == env.shape())) {
    throw DomainError("policy shape does not match the environment");
  }
  TrainResult out;
  out.log.reserve(static_cast<std::size_t>(cfg.steps));
  TrainState state = make_train_state(initial, cfg.seed);
  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    auto res = grpo_step(state, env, reference, cfg);
    const bool last = s + 1 == cfg.steps;
    if (cfg.eval.every > 0 && ((s + 1) % cfg.eval.every == 0 || last)) {
      Rng eval_rng = make_rng(derive_seed(cfg.seed, kEvalStream), static_cast<std::uint64_t>(s));
      res.metrics.eval = evaluate_policy(state.policy, env, cfg.eval.n_samples, cfg.eval.ks,
                                         cfg.eval.epsilon, eval_rng);
    }
    out.log.push_back(std::move(res.metrics));
  }
  out.final_policy = std::move(state.policy);
  return out;
}

}  // namespace sage

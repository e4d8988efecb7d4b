#include "sage/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sage/error.hpp"
#include "sage/kernels.hpp"

namespace sage {

void softmax_into(std::span<const double> logits, std::span<double> out) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= z;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : values) s += std::exp(x - m);
  return m + std::log(s);
}

TabularPolicy::TabularPolicy(const TreeShape& shape)
    : shape_(shape),
      logits_(shape.num_contexts() * static_cast<std::size_t>(shape.vocab_size()), 0.0) {}

TabularPolicy::TabularPolicy(const TreeShape& shape, std::vector<double> logits)
    : shape_(shape), logits_(std::move(logits)) {
  if (logits_.size() != shape.num_contexts() * static_cast<std::size_t>(shape.vocab_size())) {
    throw DomainError("logit table size does not match tree shape");
  }
  for (double x : logits_) {
    if (!std::isfinite(x)) throw DomainError("policy logits must be finite");
  }
}

std::span<const double> TabularPolicy::logits(std::size_t context) const {
  if (context >= num_contexts()) throw DomainError("context index out of range");
  const auto v = static_cast<std::size_t>(vocab_size());
  return std::span<const double>(logits_).subspan(context * v, v);
}

std::span<double> TabularPolicy::logits(std::size_t context) {
  if (context >= num_contexts()) throw DomainError("context index out of range");
  const auto v = static_cast<std::size_t>(vocab_size());
  return std::span<double>(logits_).subspan(context * v, v);
}

std::vector<double> TabularPolicy::probs(std::size_t context) const {
  std::vector<double> p(static_cast<std::size_t>(vocab_size()));
  probs_into(context, p);
  return p;
}

void TabularPolicy::probs_into(std::size_t context, std::span<double> out) const {
  softmax_into(logits(context), out);
}

double TabularPolicy::prob(std::size_t context, Token token) const {
  if (token < 0 || token >= vocab_size()) throw DomainError("token out of vocabulary");
  return probs(context)[static_cast<std::size_t>(token)];
}

double TabularPolicy::log_prob(std::size_t context, Token token) const {
  if (token < 0 || token >= vocab_size()) throw DomainError("token out of vocabulary");
  const auto row = logits(context);
  return row[static_cast<std::size_t>(token)] - sage::log_sum_exp(row);
}

double trajectory_prob(const TabularPolicy& policy, const TokenTreeEnvironment& env,
                       std::span<const Token> y) {
  if (!(policy.shape() == env.shape())) throw DomainError("policy does not match environment");
  const auto chain = env.shape().context_chain(y);
  double p = 1.0;
  for (std::size_t t = 0; t < y.size(); ++t) p *= policy.prob(chain[t], y[t]);
  return p;
}

TrajectoryDistribution exact_distribution(const TabularPolicy& policy,
                                          const TokenTreeEnvironment& env) {
  if (!(policy.shape() == env.shape())) throw DomainError("policy does not match environment");
  env.require_enumerable();
  TrajectoryDistribution dist;
  dist.probs.resize(static_cast<std::size_t>(env.num_trajectories()));
  kernels::trajectory_probs(policy, dist.probs);
  return dist;
}

double token_entropy(const TabularPolicy& policy, std::size_t context) {
  const auto row = policy.logits(context);
  const double lse = sage::log_sum_exp(row);
  double h = 0.0;
  for (double l : row) {
    const double logp = l - lse;
    const double p = std::exp(logp);
    if (p > 0.0) h -= p * logp;
  }
  return std::max(h, 0.0);
}

double token_surprisal(const TabularPolicy& policy, std::size_t context, Token token) {
  return std::max(-policy.log_prob(context, token), 0.0);
}

SampledTrajectory sample_trajectory(const TabularPolicy& policy, const TokenTreeEnvironment& env,
                                    Rng& rng) {
  if (!(policy.shape() == env.shape())) throw DomainError("policy does not match environment");
  const auto& shape = env.shape();
  const auto v = static_cast<std::size_t>(shape.vocab_size());
  SampledTrajectory out;
  out.tokens.reserve(static_cast<std::size_t>(shape.max_depth()));
  out.records.reserve(static_cast<std::size_t>(shape.max_depth()));
  std::vector<double> p(v);
  std::size_t prefix = 0;
  for (int t = 0; t < shape.max_depth(); ++t) {
    const std::size_t ctx = shape.level_offset(t) + prefix;
    policy.probs_into(ctx, p);
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t chosen = v - 1;
    for (std::size_t k = 0; k < v; ++k) {
      acc += p[k];
      if (u < acc) {
        chosen = k;
        break;
      }
    }
    // Guard against acc < 1 from rounding: fall back to the last token with mass.
    while (chosen > 0 && p[chosen] == 0.0) --chosen;
    const auto token = static_cast<Token>(chosen);
    out.tokens.push_back(token);
    out.records.push_back(TokenRecord{ctx, token, p[chosen], token_entropy(policy, ctx),
                                      token_surprisal(policy, ctx, token)});
    prefix = prefix * v + chosen;
  }
  return out;
}

}  // namespace sage

#include "sage/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sage/error.hpp"

namespace sage {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DomainError(std::string(what) + ": size mismatch");
}

void require_beta(double beta) {
  if (!(beta > 0.0)) throw DomainError("beta must be positive");
}

void set_normalizer(StationarySolution& s) {
  s.normalizer = std::exp(s.log_normalizer);
  s.dist.log_normalizer = s.log_normalizer;
  s.dist.normalizer = s.normalizer;
}

// dist ~ ref * exp(log_factor).
StationarySolution from_tilt(const TrajectoryDistribution& ref,
                             const std::vector<double>& log_factor, kernels::Exec exec) {
  StationarySolution s;
  s.dist.probs.resize(ref.size());
  s.log_normalizer = kernels::normalize_tilted(ref.probs, log_factor, s.dist.probs, exec);
  set_normalizer(s);
  return s;
}

StationarySolution from_log_weights(const std::vector<double>& log_w, kernels::Exec exec) {
  StationarySolution s;
  s.dist.probs.resize(log_w.size());
  s.log_normalizer = kernels::normalize_log_weights(log_w, s.dist.probs, exec);
  s.normalizer = std::exp(s.log_normalizer);
  s.dist.log_normalizer = s.log_normalizer;
  s.dist.normalizer = s.normalizer;
  return s;
}

// Largest reward among trajectories with positive reference mass.
double support_max_reward(const TrajectoryDistribution& ref, std::span<const double> rewards) {
  double rmax = kNegInf;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (ref.probs[i] > 0.0) rmax = std::max(rmax, rewards[i]);
  }
  if (!std::isfinite(rmax)) throw DomainError("reference distribution has no mass");
  return rmax;
}

// g(delta) = sum_y beta * ref(y) / (delta + rmax - r(y)) - 1, decreasing in delta.
double forward_residual(const TrajectoryDistribution& ref, std::span<const double> rewards,
                        double beta, double rmax, double delta) {
  double s = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (ref.probs[i] > 0.0) s += beta * ref.probs[i] / (delta + (rmax - rewards[i]));
  }
  return s - 1.0;
}

struct ForwardRoot {
  double rmax;
  double delta;  // lambda - rmax
};

ForwardRoot solve_forward_lambda(const TrajectoryDistribution& ref,
                                 std::span<const double> rewards, double beta) {
  const double rmax = support_max_reward(ref, rewards);
  // The bracket is over delta = lambda - rmax so that the gap to the largest
  // reward keeps full relative precision when it is tiny.
  double lo = 0.0;
  double hi = beta;
  int doublings = 0;
  while (forward_residual(ref, rewards, beta, rmax, hi) > 0.0) {
    if (++doublings > 128) throw SolverError("forward-KL normalizer: bracket not found after 128 doublings");
    lo = hi;
    hi *= 2.0;
  }
  double g_hi = forward_residual(ref, rewards, beta, rmax, hi);
  if (g_hi == 0.0) return {rmax, hi};
  for (int it = 0; it < 4000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;
    const double g = forward_residual(ref, rewards, beta, rmax, mid);
    if (g == 0.0) return {rmax, mid};
    if (g > 0.0) {
      lo = mid;
    } else {
      hi = mid;
      g_hi = g;
    }
  }
  if (lo > 0.0) {
    const double g_lo = forward_residual(ref, rewards, beta, rmax, lo);
    if (std::abs(g_lo) < std::abs(g_hi)) return {rmax, lo};
  }
  return {rmax, hi};
}

}  // namespace

AnchorWeights make_anchor(const TrajectoryDistribution& ref, std::span<const double> q_values) {
  require_same_size(ref.size(), q_values.size(), "make_anchor");
  AnchorWeights a;
  a.values.resize(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) a.values[i] = q_values[i] * ref.probs[i];
  return a;
}

double kl_exact(const TrajectoryDistribution& p, const TrajectoryDistribution& ref) {
  require_same_size(p.size(), ref.size(), "kl_exact");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.probs[i] <= 0.0) continue;
    if (!(ref.probs[i] > 0.0)) {
      throw DomainError("kl_exact: reference has no mass where p does (index " +
                        std::to_string(i) + ")");
    }
    s += p.probs[i] * (std::log(p.probs[i]) - std::log(ref.probs[i]));
  }
  return std::max(s, 0.0);
}

double pseudo_kl_exact(const TrajectoryDistribution& p, const AnchorWeights& f) {
  require_same_size(p.size(), f.values.size(), "pseudo_kl_exact");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.probs[i] <= 0.0) continue;
    if (!(f.values[i] > 0.0)) {
      throw DomainError("pseudo_kl_exact: anchor must be positive on the support of p (index " +
                        std::to_string(i) + ")");
    }
    s += p.probs[i] * (std::log(p.probs[i]) - std::log(f.values[i]));
  }
  return s;
}

PseudoKlParts pseudo_kl_decompose(const TrajectoryDistribution& p,
                                  const TrajectoryDistribution& ref,
                                  std::span<const double> guide_log_products) {
  require_same_size(p.size(), guide_log_products.size(), "pseudo_kl_decompose");
  PseudoKlParts parts;
  parts.kl_part = kl_exact(p, ref);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.probs[i] > 0.0) parts.bonus_part += p.probs[i] * guide_log_products[i];
  }
  return parts;
}

double k3_token_estimate(double ratio) {
  if (!(ratio > 0.0)) throw DomainError("k3 estimate needs a positive ratio");
  return std::max(ratio - std::log(ratio) - 1.0, 0.0);
}

StationarySolution stationary_reverse_kl(const TrajectoryDistribution& ref,
                                         std::span<const double> rewards, double beta,
                                         kernels::Exec exec) {
  require_beta(beta);
  require_same_size(ref.size(), rewards.size(), "stationary_reverse_kl");
  std::vector<double> log_f(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) log_f[i] = rewards[i] / beta;
  return from_tilt(ref, log_f, exec);
}

StationarySolution stationary_sage(const TrajectoryDistribution& ref,
                                   std::span<const double> rewards, double beta,
                                   std::span<const double> q_values, kernels::Exec exec) {
  require_beta(beta);
  require_same_size(ref.size(), rewards.size(), "stationary_sage");
  require_same_size(ref.size(), q_values.size(), "stationary_sage");
  std::vector<double> log_f(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (!(q_values[i] > 0.0)) throw DomainError("stationary_sage: guide values must be positive");
    log_f[i] = rewards[i] / beta + std::log(q_values[i]);
  }
  return from_tilt(ref, log_f, exec);
}

StationarySolution stationary_forward_kl(const TrajectoryDistribution& ref,
                                         std::span<const double> rewards, double beta) {
  require_beta(beta);
  require_same_size(ref.size(), rewards.size(), "stationary_forward_kl");
  const ForwardRoot root = solve_forward_lambda(ref, rewards, beta);
  StationarySolution s;
  s.lambda = root.rmax + root.delta;
  s.dist.probs.resize(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    s.dist.probs[i] =
        ref.probs[i] > 0.0 ? beta * ref.probs[i] / (root.delta + (root.rmax - rewards[i])) : 0.0;
  }
  return s;
}

StationarySolution stationary_entropy_reg(const TrajectoryDistribution& ref,
                                          std::span<const double> rewards, double alpha,
                                          double beta, kernels::Exec exec) {
  require_beta(beta);
  if (alpha < 0.0) throw DomainError("alpha must be >= 0");
  require_same_size(ref.size(), rewards.size(), "stationary_entropy_reg");
  const double temp = alpha + beta;
  std::vector<double> log_w(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    log_w[i] = ref.probs[i] > 0.0 ? (beta / temp) * std::log(ref.probs[i]) + rewards[i] / temp
                                  : kNegInf;
  }
  return from_log_weights(log_w, exec);
}

OffTargetReweight offtarget_reweight(const TrajectoryDistribution& ref,
                                     std::span<const double> rewards, double beta,
                                     std::span<const double> q_values) {
  require_beta(beta);
  require_same_size(ref.size(), rewards.size(), "offtarget_reweight");
  require_same_size(ref.size(), q_values.size(), "offtarget_reweight");
  OffTargetReweight out;
  std::size_t n_valid = 0;
  for (double r : rewards) {
    if (r != 0.0 && r != 1.0) throw DomainError("offtarget_reweight expects binary rewards");
    if (r == 1.0) ++n_valid;
  }
  out.degenerate = n_valid == 0 || n_valid == rewards.size();

  const ForwardRoot root = solve_forward_lambda(ref, rewards, beta);
  out.lambda = root.rmax + root.delta;
  out.log_w.resize(ref.size());
  out.w.resize(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (!(q_values[i] > 0.0)) throw DomainError("offtarget_reweight: guide values must be positive");
    out.log_w[i] = std::log(root.delta + (root.rmax - rewards[i])) - std::log(beta) +
                   rewards[i] / beta + std::log(q_values[i]);
    out.w[i] = std::exp(out.log_w[i]);
  }

  const auto sage = stationary_sage(ref, rewards, beta, q_values);
  const auto fkl = stationary_forward_kl(ref, rewards, beta);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (rewards[i] == 0.0) {
      out.sage_offmass += sage.dist.probs[i];
      out.fkl_offmass += fkl.dist.probs[i];
    }
  }
  if (out.degenerate) return out;

  double min_w_valid = std::numeric_limits<double>::infinity();
  double max_w_off = kNegInf;
  double min_q_valid = std::numeric_limits<double>::infinity();
  double max_q_off = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (rewards[i] == 1.0) {
      min_w_valid = std::min(min_w_valid, out.log_w[i]);
      min_q_valid = std::min(min_q_valid, q_values[i]);
    } else {
      max_w_off = std::max(max_w_off, out.log_w[i]);
      max_q_off = std::max(max_q_off, q_values[i]);
    }
  }
  out.separation_holds = min_w_valid > max_w_off;
  // min_C q > lambda / ((lambda - 1) e^{1/beta}) * max_{not C} q, in logs.
  // rmax == 1 here, so lambda - 1 == delta.
  const double log_threshold =
      std::log(out.lambda) - std::log(root.delta) - 1.0 / beta + std::log(max_q_off);
  out.qcond_holds = std::log(min_q_valid) > log_threshold;
  return out;
}

double objective_value(const TrajectoryDistribution& p, std::span<const double> rewards,
                       double beta, const AnchorWeights& anchor) {
  require_same_size(p.size(), rewards.size(), "objective_value");
  double er = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) er += p.probs[i] * rewards[i];
  return er - beta * pseudo_kl_exact(p, anchor);
}

double entropy_reg_objective_value(const TrajectoryDistribution& p,
                                   const TrajectoryDistribution& ref,
                                   std::span<const double> rewards, double alpha, double beta) {
  require_same_size(p.size(), rewards.size(), "entropy_reg_objective_value");
  double er = 0.0;
  double neg_h = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    er += p.probs[i] * rewards[i];
    if (p.probs[i] > 0.0) neg_h += p.probs[i] * std::log(p.probs[i]);
  }
  return er - alpha * neg_h - beta * kl_exact(p, ref);
}

}  // namespace sage

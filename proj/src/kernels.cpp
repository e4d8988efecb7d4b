#include "sage/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sage/error.hpp"

namespace sage::kernels {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_table(const TreeShape& shape, std::span<const double> table) {
  if (table.size() != shape.num_contexts() * static_cast<std::size_t>(shape.vocab_size())) {
    throw DomainError("probability table does not match tree shape");
  }
}

inline double trajectory_prob_at(const TreeShape& shape, std::span<const double> table,
                                 std::size_t index, Token* digits) {
  const int depth = shape.max_depth();
  const auto v = static_cast<std::size_t>(shape.vocab_size());
  std::size_t rest = index;
  for (int t = depth - 1; t >= 0; --t) {
    digits[t] = static_cast<Token>(rest % v);
    rest /= v;
  }
  double p = 1.0;
  std::size_t prefix = 0;
  for (int t = 0; t < depth; ++t) {
    const std::size_t ctx = shape.level_offset(t) + prefix;
    p *= table[ctx * v + static_cast<std::size_t>(digits[t])];
    prefix = prefix * v + static_cast<std::size_t>(digits[t]);
  }
  return p;
}

double block_max(std::span<const double> values, std::size_t begin, std::size_t end) {
  double m = kNegInf;
  for (std::size_t i = begin; i < end; ++i) m = std::max(m, values[i]);
  return m;
}

double block_sum_exp(std::span<const double> values, std::size_t begin, std::size_t end,
                     double shift) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += std::exp(values[i] - shift);
  return s;
}

// Below this the shifted linear-domain sum loses relative accuracy to
// underflowed terms, so the log-domain path takes over.
constexpr double kLinearMassFloor = 1e-250;

void check_tilted(std::span<const double> base, std::span<const double> log_factor,
                  std::span<double> out) {
  if (base.size() != log_factor.size() || out.size() != base.size()) {
    throw DomainError("tilted normalization: size mismatch");
  }
}

double tilted_shift(std::span<const double> base, std::span<const double> log_factor,
                    std::size_t begin, std::size_t end) {
  double m = kNegInf;
  for (std::size_t i = begin; i < end; ++i) {
    if (base[i] > 0.0) m = std::max(m, log_factor[i]);
  }
  return m;
}

double tilted_fill(std::span<const double> base, std::span<const double> log_factor,
                   std::span<double> out, std::size_t begin, std::size_t end, double shift) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    out[i] = base[i] > 0.0 ? base[i] * std::exp(log_factor[i] - shift) : 0.0;
    s += out[i];
  }
  return s;
}

std::vector<double> tilted_log_weights(std::span<const double> base,
                                       std::span<const double> log_factor) {
  std::vector<double> lw(base.size());
  for (std::size_t i = 0; i < lw.size(); ++i) {
    lw[i] = base[i] > 0.0 ? std::log(base[i]) + log_factor[i] : kNegInf;
  }
  return lw;
}

}  // namespace

void context_prob_table_serial(const TabularPolicy& policy, std::span<double> out) {
  const auto v = static_cast<std::size_t>(policy.vocab_size());
  check_table(policy.shape(), out);
  for (std::size_t c = 0; c < policy.num_contexts(); ++c) {
    softmax_into(policy.logits(c), out.subspan(c * v, v));
  }
}

void context_prob_table_omp(const TabularPolicy& policy, std::span<double> out) {
  const auto v = static_cast<std::size_t>(policy.vocab_size());
  check_table(policy.shape(), out);
  const auto n = static_cast<std::ptrdiff_t>(policy.num_contexts());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < n; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    softmax_into(policy.logits(cc), out.subspan(cc * v, v));
  }
}

void trajectory_probs_serial(const TreeShape& shape, std::span<const double> prob_table,
                             std::span<double> out) {
  check_table(shape, prob_table);
  if (out.size() != shape.num_trajectories()) throw DomainError("output size mismatch");
  std::vector<Token> digits(static_cast<std::size_t>(shape.max_depth()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = trajectory_prob_at(shape, prob_table, i, digits.data());
  }
}

void trajectory_probs_omp(const TreeShape& shape, std::span<const double> prob_table,
                          std::span<double> out) {
  check_table(shape, prob_table);
  if (out.size() != shape.num_trajectories()) throw DomainError("output size mismatch");
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel
  {
    std::vector<Token> digits(static_cast<std::size_t>(shape.max_depth()));
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(i)] =
          trajectory_prob_at(shape, prob_table, static_cast<std::size_t>(i), digits.data());
    }
  }
}

double log_sum_exp_serial(std::span<const double> values) {
  if (values.empty()) return kNegInf;
  const double m = block_max(values, 0, values.size());
  if (!std::isfinite(m)) return m;
  return m + std::log(block_sum_exp(values, 0, values.size(), m));
}

double log_sum_exp_omp(std::span<const double> values) {
  if (values.empty()) return kNegInf;
  const std::size_t blocks = (values.size() + kReductionBlock - 1) / kReductionBlock;
  std::vector<double> partial(blocks);
  const auto nb = static_cast<std::ptrdiff_t>(blocks);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const auto begin = static_cast<std::size_t>(b) * kReductionBlock;
    partial[static_cast<std::size_t>(b)] =
        block_max(values, begin, std::min(values.size(), begin + kReductionBlock));
  }
  const double m = *std::max_element(partial.begin(), partial.end());
  if (!std::isfinite(m)) return m;

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const auto begin = static_cast<std::size_t>(b) * kReductionBlock;
    partial[static_cast<std::size_t>(b)] =
        block_sum_exp(values, begin, std::min(values.size(), begin + kReductionBlock), m);
  }
  double s = 0.0;
  for (double p : partial) s += p;
  return m + std::log(s);
}

double normalize_log_weights_serial(std::span<const double> log_weights, std::span<double> out) {
  if (out.size() != log_weights.size()) throw DomainError("output size mismatch");
  const double lse = log_sum_exp_serial(log_weights);
  if (!std::isfinite(lse)) throw DomainError("log weights have no finite mass");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(log_weights[i] - lse);
  return lse;
}

double normalize_log_weights_omp(std::span<const double> log_weights, std::span<double> out) {
  if (out.size() != log_weights.size()) throw DomainError("output size mismatch");
  const double lse = log_sum_exp_omp(log_weights);
  if (!std::isfinite(lse)) throw DomainError("log weights have no finite mass");
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    out[ii] = std::exp(log_weights[ii] - lse);
  }
  return lse;
}

double normalize_tilted_serial(std::span<const double> base, std::span<const double> log_factor,
                               std::span<double> out) {
  check_tilted(base, log_factor, out);
  const double shift = tilted_shift(base, log_factor, 0, base.size());
  if (!std::isfinite(shift)) throw DomainError("tilted weights have no finite mass");
  const double z = tilted_fill(base, log_factor, out, 0, base.size(), shift);
  if (!(z >= kLinearMassFloor) || !std::isfinite(z)) {
    return normalize_log_weights_serial(tilted_log_weights(base, log_factor), out);
  }
  for (double& x : out) x /= z;
  return shift + std::log(z);
}

double normalize_tilted_omp(std::span<const double> base, std::span<const double> log_factor,
                            std::span<double> out) {
  check_tilted(base, log_factor, out);
  const std::size_t n = base.size();
  const std::size_t blocks = (n + kReductionBlock - 1) / kReductionBlock;
  const auto nb = static_cast<std::ptrdiff_t>(blocks);
  std::vector<double> partial(blocks);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const auto begin = static_cast<std::size_t>(b) * kReductionBlock;
    partial[static_cast<std::size_t>(b)] =
        tilted_shift(base, log_factor, begin, std::min(n, begin + kReductionBlock));
  }
  const double shift = partial.empty() ? kNegInf : *std::max_element(partial.begin(), partial.end());
  if (!std::isfinite(shift)) throw DomainError("tilted weights have no finite mass");

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const auto begin = static_cast<std::size_t>(b) * kReductionBlock;
    partial[static_cast<std::size_t>(b)] =
        tilted_fill(base, log_factor, out, begin, std::min(n, begin + kReductionBlock), shift);
  }
  double z = 0.0;
  for (double p : partial) z += p;
  if (!(z >= kLinearMassFloor) || !std::isfinite(z)) {
    return normalize_log_weights_omp(tilted_log_weights(base, log_factor), out);
  }
  const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < ni; ++i) out[static_cast<std::size_t>(i)] /= z;
  return shift + std::log(z);
}

void trajectory_probs(const TabularPolicy& policy, std::span<double> out, Exec exec) {
  const auto& shape = policy.shape();
  std::vector<double> table(shape.num_contexts() * static_cast<std::size_t>(shape.vocab_size()));
  if (exec == Exec::serial) {
    context_prob_table_serial(policy, table);
    trajectory_probs_serial(shape, table, out);
  } else {
    context_prob_table_omp(policy, table);
    trajectory_probs_omp(shape, table, out);
  }
}

double log_sum_exp(std::span<const double> values, Exec exec) {
  return exec == Exec::serial ? log_sum_exp_serial(values) : log_sum_exp_omp(values);
}

double normalize_log_weights(std::span<const double> log_weights, std::span<double> out,
                             Exec exec) {
  return exec == Exec::serial ? normalize_log_weights_serial(log_weights, out)
                              : normalize_log_weights_omp(log_weights, out);
}

double normalize_tilted(std::span<const double> base, std::span<const double> log_factor,
                        std::span<double> out, Exec exec) {
  return exec == Exec::serial ? normalize_tilted_serial(base, log_factor, out)
                              : normalize_tilted_omp(base, log_factor, out);
}

}  // namespace sage::kernels

#include "sage/env.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "sage/error.hpp"

namespace sage {

namespace {

constexpr std::uint64_t kSaturated = std::numeric_limits<std::uint64_t>::max();

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > kSaturated / a) return kSaturated;
  return a * b;
}

}  // namespace

TreeShape::TreeShape(int vocab_size, int max_depth)
    : vocab_size_(vocab_size), max_depth_(max_depth) {
  if (vocab_size < 1) throw DomainError("vocab_size must be positive");
  if (max_depth < 1) throw DomainError("max_depth must be positive");
  const auto v = static_cast<std::uint64_t>(vocab_size);
  offsets_.assign(static_cast<std::size_t>(max_depth) + 1, 0);
  std::uint64_t level = 1;
  for (int d = 0; d < max_depth; ++d) {
    if (level == kSaturated || offsets_[d] > kSaturated - level) {
      throw DomainError("token tree with vocab_size=" + std::to_string(vocab_size) +
                        " and max_depth=" + std::to_string(max_depth) +
                        " has too many contexts to index");
    }
    offsets_[d + 1] = offsets_[d] + level;
    level = saturating_mul(level, v);
  }
  num_trajectories_ = level;
}

std::size_t TreeShape::context_index(std::span<const Token> prefix) const {
  if (prefix.size() >= static_cast<std::size_t>(max_depth_)) {
    throw DomainError("context prefix must be shorter than max_depth");
  }
  std::size_t value = 0;
  for (Token t : prefix) {
    if (t < 0 || t >= vocab_size_) throw DomainError("token out of vocabulary");
    value = value * static_cast<std::size_t>(vocab_size_) + static_cast<std::size_t>(t);
  }
  return offsets_[prefix.size()] + value;
}

int TreeShape::context_depth(std::size_t context) const {
  if (context >= num_contexts()) throw DomainError("context index out of range");
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), context);
  return static_cast<int>(it - offsets_.begin()) - 1;
}

std::size_t TreeShape::child_context(std::size_t context, Token token) const {
  const int d = context_depth(context);
  if (d + 1 >= max_depth_) throw DomainError("child of a last-level context is terminal");
  const std::size_t value = context - offsets_[d];
  return offsets_[d + 1] + value * static_cast<std::size_t>(vocab_size_) +
         static_cast<std::size_t>(token);
}

Trajectory TreeShape::context_prefix(std::size_t context) const {
  const int d = context_depth(context);
  std::size_t value = context - offsets_[d];
  Trajectory prefix(static_cast<std::size_t>(d));
  for (int i = d - 1; i >= 0; --i) {
    prefix[i] = static_cast<Token>(value % static_cast<std::size_t>(vocab_size_));
    value /= static_cast<std::size_t>(vocab_size_);
  }
  return prefix;
}

bool TreeShape::is_terminal(std::span<const Token> y) const {
  if (y.size() != static_cast<std::size_t>(max_depth_)) return false;
  return std::all_of(y.begin(), y.end(), [&](Token t) { return t >= 0 && t < vocab_size_; });
}

std::uint64_t TreeShape::trajectory_index(std::span<const Token> y) const {
  if (!is_terminal(y)) throw DomainError("not a complete trajectory");
  std::uint64_t value = 0;
  for (Token t : y) value = value * static_cast<std::uint64_t>(vocab_size_) + static_cast<std::uint64_t>(t);
  return value;
}

Trajectory TreeShape::trajectory_at(std::uint64_t index) const {
  if (index >= num_trajectories_) throw DomainError("trajectory index out of range");
  Trajectory y(static_cast<std::size_t>(max_depth_));
  for (int i = max_depth_ - 1; i >= 0; --i) {
    y[i] = static_cast<Token>(index % static_cast<std::uint64_t>(vocab_size_));
    index /= static_cast<std::uint64_t>(vocab_size_);
  }
  return y;
}

std::vector<std::size_t> TreeShape::context_chain(std::span<const Token> y) const {
  if (!is_terminal(y)) throw DomainError("not a complete trajectory");
  std::vector<std::size_t> chain(y.size());
  std::size_t value = 0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    chain[t] = offsets_[t] + value;
    value = value * static_cast<std::size_t>(vocab_size_) + static_cast<std::size_t>(y[t]);
  }
  return chain;
}

TokenTreeEnvironment::TokenTreeEnvironment(int vocab_size, int max_depth,
                                           std::vector<Trajectory> valid,
                                           std::uint64_t enumeration_budget)
    : shape_(vocab_size, max_depth), budget_(enumeration_budget) {
  valid_index_.reserve(valid.size());
  for (const auto& y : valid) {
    if (!shape_.is_terminal(y)) {
      throw DomainError("valid trajectory is not a complete trajectory of this tree");
    }
    valid_index_.push_back(shape_.trajectory_index(y));
  }
  std::sort(valid_index_.begin(), valid_index_.end());
  valid_index_.erase(std::unique(valid_index_.begin(), valid_index_.end()), valid_index_.end());
  valid_.reserve(valid_index_.size());
  for (auto idx : valid_index_) valid_.push_back(shape_.trajectory_at(idx));
}

void TokenTreeEnvironment::require_enumerable() const {
  if (!within_budget()) throw EnumerationRefused(shape_.num_trajectories(), budget_);
}

int TokenTreeEnvironment::reward(std::span<const Token> y) const {
  if (!shape_.is_terminal(y)) {
    throw DomainError("reward is defined on complete trajectories only (got length " +
                      std::to_string(y.size()) + ")");
  }
  return reward_at(shape_.trajectory_index(y));
}

int TokenTreeEnvironment::reward_at(std::uint64_t index) const {
  return std::binary_search(valid_index_.begin(), valid_index_.end(), index) ? 1 : 0;
}

std::vector<double> TokenTreeEnvironment::reward_vector() const {
  require_enumerable();
  std::vector<double> r(static_cast<std::size_t>(num_trajectories()), 0.0);
  for (auto idx : valid_index_) r[static_cast<std::size_t>(idx)] = 1.0;
  return r;
}

std::vector<EnumeratedTrajectory> enumerate_trajectories(const TokenTreeEnvironment& env) {
  env.require_enumerable();
  const auto& shape = env.shape();
  const auto n = static_cast<std::size_t>(shape.num_trajectories());
  std::vector<EnumeratedTrajectory> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    EnumeratedTrajectory e;
    e.tokens = shape.trajectory_at(i);
    e.contexts = shape.context_chain(e.tokens);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sage

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sage {

using Token = std::int32_t;
using Trajectory = std::vector<Token>;

inline constexpr std::uint64_t kDefaultEnumerationBudget = 1'000'000;

// Index arithmetic for a complete V-ary tree of depth T.
//
// A context is a token prefix of length 0..T-1. Contexts are numbered level
// by level: all prefixes of length d occupy [offset(d), offset(d) + V^d),
// ordered as base-V numbers. Complete trajectories (length T) are numbered
// the same way, which is also their lexicographic order.
class TreeShape {
 public:
  TreeShape() = default;
  TreeShape(int vocab_size, int max_depth);

  int vocab_size() const { return vocab_size_; }
  int max_depth() const { return max_depth_; }

  std::size_t num_contexts() const { return offsets_.back(); }
  // V^T; saturates at UINT64_MAX for absurd shapes.
  std::uint64_t num_trajectories() const { return num_trajectories_; }
  std::size_t level_offset(int depth) const { return offsets_[static_cast<std::size_t>(depth)]; }

  std::size_t root_context() const { return 0; }
  std::size_t context_index(std::span<const Token> prefix) const;
  std::size_t child_context(std::size_t context, Token token) const;
  int context_depth(std::size_t context) const;
  Trajectory context_prefix(std::size_t context) const;

  std::uint64_t trajectory_index(std::span<const Token> y) const;
  Trajectory trajectory_at(std::uint64_t index) const;
  // Context visited before each token of y (length T).
  std::vector<std::size_t> context_chain(std::span<const Token> y) const;

  bool is_terminal(std::span<const Token> y) const;
  bool operator==(const TreeShape&) const = default;

 private:
  int vocab_size_ = 0;
  int max_depth_ = 0;
  std::uint64_t num_trajectories_ = 0;
  std::vector<std::size_t> offsets_{0};
};

struct EnumeratedTrajectory {
  Trajectory tokens;
  std::vector<std::size_t> contexts;
};

// Finite verifiable-reward generation task over a fixed-horizon token tree.
// Binary reward: 1 on the configured valid set, 0 elsewhere.
class TokenTreeEnvironment {
 public:
  TokenTreeEnvironment(int vocab_size, int max_depth, std::vector<Trajectory> valid,
                       std::uint64_t enumeration_budget = kDefaultEnumerationBudget);

  const TreeShape& shape() const { return shape_; }
  int vocab_size() const { return shape_.vocab_size(); }
  int max_depth() const { return shape_.max_depth(); }
  std::uint64_t enumeration_budget() const { return budget_; }

  std::uint64_t num_trajectories() const { return shape_.num_trajectories(); }
  bool within_budget() const { return shape_.num_trajectories() <= budget_; }
  // Throws EnumerationRefused when the tree exceeds the budget.
  void require_enumerable() const;

  // Sorted by trajectory index (lexicographic).
  const std::vector<Trajectory>& valid_trajectories() const { return valid_; }
  const std::vector<std::uint64_t>& valid_indices() const { return valid_index_; }

  // 0 or 1; throws DomainError when y is not a complete trajectory.
  int reward(std::span<const Token> y) const;
  int reward_at(std::uint64_t index) const;

  // Rewards aligned with enumeration order. Budget-checked.
  std::vector<double> reward_vector() const;

 private:
  TreeShape shape_;
  std::uint64_t budget_;
  std::vector<Trajectory> valid_;
  std::vector<std::uint64_t> valid_index_;
};

// Every complete trajectory in lexicographic order, each with its context
// chain. Throws EnumerationRefused when over budget.
std::vector<EnumeratedTrajectory> enumerate_trajectories(const TokenTreeEnvironment& env);

}  // namespace sage

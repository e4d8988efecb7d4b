#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sage/env.hpp"
#include "sage/policy.hpp"

namespace sage {

// Generator for environments with one rare, reward-valid trajectory y* that
// sits behind a high-entropy branching decision.
//
// Tree layout before the seeded relabeling (depth T >= 2):
//   root:            common tokens 0..m-1 (valid paths), branch token m,
//                    decoy tokens m+1..V-1 (invalid paths)
//   after common i:  valid continuation with probability common_continuation,
//                    one slip token (invalid) with the remainder
//   after branch:    the branch point; y*'s token has probability s and the
//                    remaining tokens follow a geometric profile whose
//                    steepness is solved so the context entropy matches
//                    branch_entropy_target
//   everything else: near-deterministic filler (entropy ~ 0)
//
// pi_ref(y*) = branch_mass * s exactly (continuations after the branch point
// are deterministic).
struct RareModeSpec {
  double rare_mass = 1e-6;
  double branch_entropy_target = 5.0;  // nats
  int num_common_valid = 1;
  int vocab_size = 0;  // 0: smallest vocabulary that can reach the entropy target
  int max_depth = 2;
  double branch_mass = 0.0;  // 0: rare_mass * V, capped at 0.9 of the non-decoy mass
  double decoy_mass = 0.0;   // root mass on invalid decoy subtrees
  double common_continuation = 1.0;
  // When set, every branch-point token leads to a valid path, so the branch is
  // a whole valid mode and y* is one member of it. Otherwise only y* is valid
  // behind the branch token.
  bool branch_valid = false;
  double support_epsilon = 0.0;  // consuming experiment's threshold; 0 = unknown
  double filler_gap = 40.0;      // logit gap used for deterministic contexts
  std::uint64_t enumeration_budget = kDefaultEnumerationBudget;
};

struct RareModeEnv {
  TokenTreeEnvironment env;
  TabularPolicy reference;
  Trajectory y_star;
  std::vector<Trajectory> common_valid;
  std::vector<Trajectory> branch_valid;  // valid siblings of y* (branch_valid only)
  std::size_t branch_context = 0;  // context of the high-entropy decision on y*'s path
  double branch_entropy = 0.0;
  std::vector<std::string> warnings;  // e.g. "rare_mass_in_support"
};

// Deterministic given (spec, seed). Different seeds relabel tokens with a
// per-depth permutation; the probability structure is identical.
// Throws ConstructionError naming the violated constraint.
RareModeEnv make_rare_mode_env(const RareModeSpec& spec, std::uint64_t seed);

}  // namespace sage

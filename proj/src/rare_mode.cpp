#include "sage/rare_mode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "sage/error.hpp"
#include "sage/rng.hpp"

namespace sage {

namespace {

// Binary entropy of the split (s, 1 - s).
double split_entropy(double s) {
  double h = 0.0;
  if (s > 0.0) h -= s * std::log(s);
  if (s < 1.0) h -= (1.0 - s) * std::log1p(-s);
  return h;
}

// Normalized geometric profile q_j ~ exp(-kappa * j), j < n.
std::vector<double> geometric_profile(int n, double kappa) {
  std::vector<double> q(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) q[j] = std::exp(-kappa * j);
  const double z = std::accumulate(q.begin(), q.end(), 0.0);
  for (double& x : q) x /= z;
  return q;
}

double profile_entropy(const std::vector<double>& q) {
  double h = 0.0;
  for (double x : q) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

// Steepness whose profile over n tokens has the requested entropy.
double solve_profile_steepness(int n, double target) {
  if (n <= 1) return 0.0;
  if (target >= std::log(static_cast<double>(n))) return 0.0;
  double lo = 0.0;
  double hi = 1.0;
  while (profile_entropy(geometric_profile(n, hi)) > target) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (profile_entropy(geometric_profile(n, mid)) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-15 * hi) break;
  }
  return 0.5 * (lo + hi);
}

struct Layout {
  int vocab = 0;
  double branch_mass = 0.0;
  double star_share = 0.0;  // s: probability of y*'s token at the branch point
  double rest_target = 0.0;  // entropy required from the non-y* tokens
};

// Returns the layout for vocabulary size v, or the violated constraint.
std::optional<Layout> plan_layout(const RareModeSpec& spec, int v, std::string* why) {
  const int m = spec.num_common_valid;
  const int decoys = v - m - 1;
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return std::nullopt;
  };
  if (decoys < 0) return fail("vocab_size must be at least num_common_valid + 1");
  if (spec.decoy_mass > 0.0 && decoys == 0) {
    return fail("decoy_mass > 0 needs a vocabulary with at least one decoy token");
  }
  if (spec.common_continuation < 1.0 && v < 2) {
    return fail("common_continuation < 1 needs vocab_size >= 2");
  }
  Layout l;
  l.vocab = v;
  const double non_decoy = 1.0 - spec.decoy_mass;
  l.branch_mass = spec.branch_mass > 0.0
                      ? spec.branch_mass
                      : std::min(spec.rare_mass * v, 0.9 * non_decoy);
  if (l.branch_mass + spec.decoy_mass >= 1.0) {
    return fail("branch_mass + decoy_mass must leave positive mass for the common valid paths");
  }
  l.star_share = spec.rare_mass / l.branch_mass;
  if (l.star_share > 1.0) {
    return fail("rare_mass exceeds branch_mass (y* cannot be likelier than its branch)");
  }
  const double h_split = split_entropy(l.star_share);
  const double h_max = h_split + (1.0 - l.star_share) * std::log(static_cast<double>(v - 1));
  const double target = spec.branch_entropy_target;
  if (l.star_share >= 1.0 || v < 2) {
    if (std::abs(target) > 0.1) return fail("branch point has a single option; entropy is 0");
    l.rest_target = 0.0;
    return l;
  }
  if (target > h_max + 1e-12) {
    std::ostringstream os;
    os << "branch_entropy_target " << target << " exceeds the maximum " << h_max
       << " nats reachable with vocab_size " << v;
    return fail(os.str());
  }
  if (target < h_split) {
    std::ostringstream os;
    os << "branch_entropy_target " << target << " is below the minimum " << h_split
       << " nats implied by y*'s share " << l.star_share << " at the branch point";
    return fail(os.str());
  }
  l.rest_target = std::min((target - h_split) / (1.0 - l.star_share),
                           std::log(static_cast<double>(v - 1)));
  return l;
}

std::uint64_t power(std::uint64_t base, int exp) {
  std::uint64_t r = 1;
  for (int i = 0; i < exp; ++i) {
    if (base != 0 && r > UINT64_MAX / base) return UINT64_MAX;
    r *= base;
  }
  return r;
}

void set_row_from_probs(std::span<double> row, const std::vector<double>& p) {
  for (std::size_t k = 0; k < row.size(); ++k) row[k] = std::max(std::log(p[k]), -700.0);
}

}  // namespace

RareModeEnv make_rare_mode_env(const RareModeSpec& spec, std::uint64_t seed) {
  if (!(spec.rare_mass > 0.0 && spec.rare_mass < 1.0)) {
    throw ConstructionError("rare_mass must lie in (0, 1)");
  }
  if (spec.num_common_valid < 1) throw ConstructionError("num_common_valid must be >= 1");
  if (spec.max_depth < 2) throw ConstructionError("max_depth must be >= 2");
  if (spec.decoy_mass < 0.0 || spec.decoy_mass >= 1.0) {
    throw ConstructionError("decoy_mass must lie in [0, 1)");
  }
  if (!(spec.common_continuation > 0.0 && spec.common_continuation <= 1.0)) {
    throw ConstructionError("common_continuation must lie in (0, 1]");
  }
  if (spec.branch_entropy_target < 0.0) {
    throw ConstructionError("branch_entropy_target must be nonnegative");
  }

  std::optional<Layout> layout;
  std::string why;
  if (spec.vocab_size > 0) {
    if (power(static_cast<std::uint64_t>(spec.vocab_size), spec.max_depth) >
        spec.enumeration_budget) {
      throw ConstructionError("vocab_size^max_depth exceeds the enumeration budget");
    }
    layout = plan_layout(spec, spec.vocab_size, &why);
  } else {
    for (int v = spec.num_common_valid + 1;; ++v) {
      if (power(static_cast<std::uint64_t>(v), spec.max_depth) > spec.enumeration_budget) {
        if (why.empty()) why = "no vocabulary within the enumeration budget";
        why += " (searched up to the enumeration budget)";
        break;
      }
      layout = plan_layout(spec, v, &why);
      if (layout) break;
    }
  }
  if (!layout) throw ConstructionError("unsatisfiable rare-mode spec: " + why);

  const int v = layout->vocab;
  const int m = spec.num_common_valid;
  const int depth = spec.max_depth;
  const TreeShape shape(v, depth);
  const auto vs = static_cast<std::size_t>(v);
  const double tiny = std::exp(-spec.filler_gap);

  // Canonical table: every context starts as deterministic filler on token 0.
  std::vector<double> canon(shape.num_contexts() * vs, -spec.filler_gap);
  for (std::size_t c = 0; c < shape.num_contexts(); ++c) canon[c * vs] = 0.0;
  auto row = [&](std::size_t c) { return std::span<double>(canon).subspan(c * vs, vs); };

  // Root.
  {
    std::vector<double> p(vs, 0.0);
    const int decoys = v - m - 1;
    const double common = 1.0 - layout->branch_mass - spec.decoy_mass;
    for (int i = 0; i < m; ++i) p[i] = common / m;
    p[m] = layout->branch_mass;
    for (int k = m + 1; k < v; ++k) p[k] = spec.decoy_mass > 0.0 ? spec.decoy_mass / decoys : tiny;
    set_row_from_probs(row(shape.root_context()), p);
  }
  // Continuations after the common tokens.
  if (spec.common_continuation < 1.0) {
    for (int i = 0; i < m; ++i) {
      std::vector<double> p(vs, tiny);
      p[0] = spec.common_continuation;
      p[1] = 1.0 - spec.common_continuation;
      set_row_from_probs(row(shape.child_context(shape.root_context(), i)), p);
    }
  }
  // Branch point.
  const std::size_t branch_canon = shape.child_context(shape.root_context(), m);
  {
    std::vector<double> p(vs, 0.0);
    p[0] = layout->star_share;
    if (v > 1) {
      const double kappa = solve_profile_steepness(v - 1, layout->rest_target);
      const auto q = geometric_profile(v - 1, kappa);
      for (int j = 1; j < v; ++j) p[j] = (1.0 - layout->star_share) * q[j - 1];
    }
    set_row_from_probs(row(branch_canon), p);
  }

  // Seeded relabeling, one permutation per depth.
  Rng rng = make_rng(seed, 0x7261726dULL);
  std::vector<std::vector<Token>> perm(static_cast<std::size_t>(depth), std::vector<Token>(vs));
  for (auto& pd : perm) {
    std::iota(pd.begin(), pd.end(), Token{0});
    std::shuffle(pd.begin(), pd.end(), rng);
  }
  auto relabel = [&](const Trajectory& canon_prefix) {
    Trajectory out(canon_prefix.size());
    for (std::size_t t = 0; t < canon_prefix.size(); ++t) out[t] = perm[t][canon_prefix[t]];
    return out;
  };

  std::vector<double> logits(canon.size());
  for (std::size_t c = 0; c < shape.num_contexts(); ++c) {
    const Trajectory prefix = shape.context_prefix(c);
    const std::size_t target = shape.context_index(relabel(prefix));
    const auto& pd = perm[prefix.size()];
    for (std::size_t k = 0; k < vs; ++k) logits[target * vs + static_cast<std::size_t>(pd[k])] = canon[c * vs + k];
  }

  auto canonical_path = [&](Token first) {
    Trajectory y(static_cast<std::size_t>(depth), 0);
    y[0] = first;
    return relabel(y);
  };
  std::vector<Trajectory> common_valid;
  for (int i = 0; i < m; ++i) common_valid.push_back(canonical_path(i));
  const Trajectory y_star = canonical_path(m);

  std::vector<Trajectory> branch_valid;
  if (spec.branch_valid) {
    for (int j = 1; j < v; ++j) {
      Trajectory y(static_cast<std::size_t>(depth), 0);
      y[0] = m;
      y[1] = j;
      branch_valid.push_back(relabel(y));
    }
  }

  std::vector<Trajectory> valid = common_valid;
  valid.push_back(y_star);
  valid.insert(valid.end(), branch_valid.begin(), branch_valid.end());
  TokenTreeEnvironment env(v, depth, valid, spec.enumeration_budget);
  TabularPolicy reference(shape, std::move(logits));

  const std::size_t branch_context = shape.context_index(relabel(shape.context_prefix(branch_canon)));
  RareModeEnv out{std::move(env),          std::move(reference),   y_star,
                  std::move(common_valid), std::move(branch_valid), branch_context, 0.0, {}};
  out.branch_entropy = token_entropy(out.reference, branch_context);
  if (std::abs(out.branch_entropy - spec.branch_entropy_target) > 0.1) {
    throw ConstructionError("branch entropy " + std::to_string(out.branch_entropy) +
                            " misses the target by more than 0.1 nats");
  }
  const double star = trajectory_prob(out.reference, out.env, out.y_star);
  if (std::abs(star - spec.rare_mass) > 1e-9) {
    throw ConstructionError("pi_ref(y*) = " + std::to_string(star) + " misses rare_mass");
  }
  if (spec.support_epsilon > 0.0 && spec.rare_mass >= spec.support_epsilon) {
    out.warnings.emplace_back("rare_mass_in_support");
  }
  return out;
}

}  // namespace sage

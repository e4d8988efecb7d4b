#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sage/kernels.hpp"
#include "sage/objectives.hpp"
#include "sage/policy.hpp"
#include "sage/rare_mode.hpp"
#include "sage/trainer.hpp"

namespace sage {

// Indices (into the enumeration order) of valid trajectories with mass
// strictly above epsilon. `valid` lists valid indices in ascending order.
std::vector<std::size_t> empirical_support(const TrajectoryDistribution& dist, double epsilon,
                                           std::span<const std::uint64_t> valid);

struct ExpansionReport {
  double q_star = 0.0;
  double expectation_q = 0.0;  // E_{pi_RLVR}[q]
  double rhs_threshold = 0.0;  // epsilon / pi_RLVR(y*) * E[q]
  bool condition_holds = false;
  double rlvr_prob_star = 0.0;
  double sage_prob_star = 0.0;
  bool membership = false;  // pi_SAGE(y*) > epsilon
  // max_y |pi_SAGE(y) - pi_RLVR(y) q(y) / E[q]|
  double identity_residual = 0.0;
};

// Exact check of the sufficient condition for y* entering the epsilon-support
// of the shaped stationary policy. Throws DomainError if y* is not valid.
ExpansionReport check_expansion_condition(const TrajectoryDistribution& ref,
                                          std::span<const double> rewards, double beta,
                                          std::span<const double> q_values, std::size_t y_star,
                                          double epsilon);

struct ToyReport {
  double ref_star = 0.0;
  double q_common = 0.0;
  std::vector<double> entropies_common;
  std::vector<double> entropies_star;
  double beta = 0.0;
  double gamma = 0.0;
  double tau = 0.0;
  double epsilon = 0.0;
  ExpansionReport expansion;
  std::string trace;
};

// Two trajectories y1, y* with pi_ref = (1 - 1e-6, 1e-6), both valid, branch
// guide (tau, gamma) = (1, 30) over per-token entropies (0.1, 0.2) and
// (5.0, 0.3), epsilon = 1e-4.
ToyReport run_toy_example();

struct OfftargetReport {
  OffTargetReweight reweight;
  bool inequality_holds = false;  // sage_offmass < fkl_offmass
  bool separation_implication_ok = true;
  bool qcond_implication_ok = true;
};

OfftargetReport offtarget_comparison(const TrajectoryDistribution& ref,
                                     std::span<const double> rewards, double beta,
                                     std::span<const double> q_values);

struct PreservationTrial {
  std::uint64_t seed = 0;
  std::int64_t times_sampled = 0;  // rollouts that hit y*
  double final_prob = 0.0;
  bool in_support = false;
};

struct PreservationReport {
  double epsilon = 0.0;
  double initial_prob = 0.0;
  std::vector<PreservationTrial> trials;
  std::int64_t trials_sampled = 0;
  std::int64_t trials_in_support = 0;
  double fraction_in_support = 0.0;
};

// Trains `trials` independent runs (seeds derived from cfg.seed and the trial
// index) and tracks y* through sampling and the final exact probability.
PreservationReport support_preservation_sim(const TrainerConfig& cfg, const RareModeEnv& rm,
                                            double epsilon, int trials,
                                            kernels::Exec exec = kernels::Exec::parallel);

// Random instance for the randomized verifiers: a tabular reference on a
// small random tree, binary rewards with a proper nonempty valid set,
// positive guide values, and a valid y*.
struct TheoryInstance {
  std::uint64_t seed = 0;
  int vocab_size = 0;
  int max_depth = 0;
  std::vector<double> ref_logits;
  TrajectoryDistribution ref;
  std::vector<double> rewards;
  std::vector<double> q;
  double beta = 0.0;
  double epsilon = 0.0;
  std::size_t y_star = 0;
};

enum class InstanceKind {
  expansion,  // q log-normal with occasional spikes on y*, wide beta range
  offtarget,  // beta = 0.05, q biased toward the valid set
  generic,    // log-normal q, wide beta range
};

TheoryInstance random_instance(std::uint64_t seed, InstanceKind kind);

}  // namespace sage

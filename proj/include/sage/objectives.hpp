#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sage/kernels.hpp"
#include "sage/policy.hpp"

namespace sage {

// Positive, possibly unnormalized per-trajectory weights f(y) = q(y) * pi_ref(y).
struct AnchorWeights {
  std::vector<double> values;
};

AnchorWeights make_anchor(const TrajectoryDistribution& ref, std::span<const double> q_values);

struct StationarySolution {
  TrajectoryDistribution dist;
  double normalizer = 1.0;      // may overflow to +inf for tiny beta; see log_normalizer
  double log_normalizer = 0.0;
  std::optional<double> lambda;  // forward-KL only
};

double kl_exact(const TrajectoryDistribution& p, const TrajectoryDistribution& ref);
double pseudo_kl_exact(const TrajectoryDistribution& p, const AnchorWeights& f);

struct PseudoKlParts {
  double kl_part = 0.0;     // KL(p || ref)
  double bonus_part = 0.0;  // E_p[log q]
};

PseudoKlParts pseudo_kl_decompose(const TrajectoryDistribution& p,
                                  const TrajectoryDistribution& ref,
                                  std::span<const double> guide_log_products);

// ratio - log(ratio) - 1.
double k3_token_estimate(double ratio);

// dist ~ ref * exp(r / beta).
StationarySolution stationary_reverse_kl(const TrajectoryDistribution& ref,
                                         std::span<const double> rewards, double beta,
                                         kernels::Exec exec = kernels::Exec::parallel);

// dist ~ q * ref * exp(r / beta).
StationarySolution stationary_sage(const TrajectoryDistribution& ref,
                                   std::span<const double> rewards, double beta,
                                   std::span<const double> q_values,
                                   kernels::Exec exec = kernels::Exec::parallel);

// dist = beta * ref / (lambda - r) with lambda > max r fixed by normalization.
StationarySolution stationary_forward_kl(const TrajectoryDistribution& ref,
                                         std::span<const double> rewards, double beta);

// dist ~ ref^(beta / (alpha + beta)) * exp(r / (alpha + beta)).
StationarySolution stationary_entropy_reg(const TrajectoryDistribution& ref,
                                          std::span<const double> rewards, double alpha,
                                          double beta,
                                          kernels::Exec exec = kernels::Exec::parallel);

struct OffTargetReweight {
  std::vector<double> log_w;  // log of ((lambda - r) / beta) * exp(r / beta) * q
  std::vector<double> w;      // exp(log_w); may overflow for tiny beta
  double lambda = 0.0;
  bool degenerate = false;  // valid set empty or everything valid
  bool separation_holds = false;
  bool qcond_holds = false;
  double sage_offmass = 0.0;
  double fkl_offmass = 0.0;
};

// Rewards must be binary; the valid set is {y : r(y) = 1}.
OffTargetReweight offtarget_reweight(const TrajectoryDistribution& ref,
                                     std::span<const double> rewards, double beta,
                                     std::span<const double> q_values);

// E_p[r] - beta * pseudo_kl(p, anchor).
double objective_value(const TrajectoryDistribution& p, std::span<const double> rewards,
                       double beta, const AnchorWeights& anchor);

// E_p[r] + alpha * H(p) - beta * KL(p || ref).
double entropy_reg_objective_value(const TrajectoryDistribution& p,
                                   const TrajectoryDistribution& ref,
                                   std::span<const double> rewards, double alpha, double beta);

}  // namespace sage

#pragma once

// Enumeration kernels behind the exact oracles. Each kernel has a serial
// reference implementation and an OpenMP implementation; tests hold the two
// against each other and bench/ compares their throughput.
//
// Parallel reductions are blocked with a fixed block size and combined in
// block order, so results do not depend on the thread count.

#include <cstddef>
#include <span>

#include "sage/policy.hpp"

namespace sage::kernels {

enum class Exec { serial, parallel };

inline constexpr std::size_t kReductionBlock = 4096;

// out[c * V + v] = pi(v | c) for every context c. out.size() == contexts * V.
void context_prob_table_serial(const TabularPolicy& policy, std::span<double> out);
void context_prob_table_omp(const TabularPolicy& policy, std::span<double> out);

// out[i] = product of per-token conditionals along trajectory i, multiplied
// left to right starting from 1.0. out.size() == V^T.
void trajectory_probs_serial(const TreeShape& shape, std::span<const double> prob_table,
                             std::span<double> out);
void trajectory_probs_omp(const TreeShape& shape, std::span<const double> prob_table,
                          std::span<double> out);

double log_sum_exp_serial(std::span<const double> values);
double log_sum_exp_omp(std::span<const double> values);

// out[i] = exp(log_weights[i] - lse); returns lse. -inf weights map to 0.
double normalize_log_weights_serial(std::span<const double> log_weights, std::span<double> out);
double normalize_log_weights_omp(std::span<const double> log_weights, std::span<double> out);

// out[i] ~ base[i] * exp(log_factor[i]), normalized; returns the log
// normalizer log sum_i base[i] exp(log_factor[i]). Works in the linear domain
// after shifting by the largest factor (entries whose factor is the largest
// keep their base value exactly) and falls back to log-domain weights when
// the shifted mass is too small to represent accurately.
double normalize_tilted_serial(std::span<const double> base, std::span<const double> log_factor,
                               std::span<double> out);
double normalize_tilted_omp(std::span<const double> base, std::span<const double> log_factor,
                            std::span<double> out);

// Dispatchers.
void trajectory_probs(const TabularPolicy& policy, std::span<double> out,
                      Exec exec = Exec::parallel);
double log_sum_exp(std::span<const double> values, Exec exec = Exec::parallel);
double normalize_log_weights(std::span<const double> log_weights, std::span<double> out,
                             Exec exec = Exec::parallel);
double normalize_tilted(std::span<const double> base, std::span<const double> log_factor,
                        std::span<double> out, Exec exec = Exec::parallel);

}  // namespace sage::kernels

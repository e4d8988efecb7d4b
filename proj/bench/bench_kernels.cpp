// Serial versus OpenMP enumeration kernels. Sizes are V^T for a few tree
// shapes, up to the 1e6 enumeration budget.
#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "sage/kernels.hpp"
#include "sage/rng.hpp"

using namespace sage;
namespace k = sage::kernels;

namespace {

TabularPolicy make_policy(int vocab, int depth) {
  const TreeShape shape(vocab, depth);
  Rng rng = make_rng(1, 0);
  std::vector<double> l(shape.num_contexts() * static_cast<std::size_t>(vocab));
  for (double& x : l) x = standard_normal(rng);
  return TabularPolicy(shape, std::move(l));
}

std::vector<double> normals(std::size_t n, std::uint64_t stream) {
  Rng rng = make_rng(2, stream);
  std::vector<double> v(n);
  for (double& x : v) x = 5.0 * standard_normal(rng);
  return v;
}

// Shapes indexed by range(0): V^T = 4^6, 10^5, 31^4, 10^6.
const int kShapes[][2] = {{4, 6}, {10, 5}, {31, 4}, {10, 6}};

template <bool Parallel>
void BM_TrajectoryProbs(benchmark::State& state) {
  const auto [v, t] = kShapes[state.range(0)];
  const auto pol = make_policy(v, t);
  std::vector<double> table(pol.num_contexts() * static_cast<std::size_t>(v));
  k::context_prob_table_serial(pol, table);
  std::vector<double> out(pol.shape().num_trajectories());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::trajectory_probs_omp(pol.shape(), table, out);
    } else {
      k::trajectory_probs_serial(pol.shape(), table, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(out.size()));
}

template <bool Parallel>
void BM_LogSumExp(benchmark::State& state) {
  const auto v = normals(static_cast<std::size_t>(state.range(0)), 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Parallel ? k::log_sum_exp_omp(v) : k::log_sum_exp_serial(v));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_NormalizeLogWeights(benchmark::State& state) {
  const auto v = normals(static_cast<std::size_t>(state.range(0)), 1);
  std::vector<double> out(v.size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(Parallel ? k::normalize_log_weights_omp(v, out)
                                      : k::normalize_log_weights_serial(v, out));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_NormalizeTilted(benchmark::State& state) {
  auto base = normals(static_cast<std::size_t>(state.range(0)), 2);
  for (double& x : base) x = std::exp(x / 5.0);
  const auto lf = normals(base.size(), 3);
  std::vector<double> out(base.size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(Parallel ? k::normalize_tilted_omp(base, lf, out)
                                      : k::normalize_tilted_serial(base, lf, out));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_TrajectoryProbs<false>)->Name("trajectory_probs/serial")->DenseRange(0, 3)->UseRealTime();
BENCHMARK(BM_TrajectoryProbs<true>)->Name("trajectory_probs/omp")->DenseRange(0, 3)->UseRealTime();
BENCHMARK(BM_LogSumExp<false>)->Name("log_sum_exp/serial")->RangeMultiplier(10)->Range(1000, 1000000)->UseRealTime();
BENCHMARK(BM_LogSumExp<true>)->Name("log_sum_exp/omp")->RangeMultiplier(10)->Range(1000, 1000000)->UseRealTime();
BENCHMARK(BM_NormalizeLogWeights<false>)->Name("normalize_log_weights/serial")->RangeMultiplier(10)->Range(1000, 1000000)->UseRealTime();
BENCHMARK(BM_NormalizeLogWeights<true>)->Name("normalize_log_weights/omp")->RangeMultiplier(10)->Range(1000, 1000000)->UseRealTime();
BENCHMARK(BM_NormalizeTilted<false>)->Name("normalize_tilted/serial")->RangeMultiplier(10)->Range(1000, 1000000)->UseRealTime();
BENCHMARK(BM_NormalizeTilted<true>)->Name("normalize_tilted/omp")->RangeMultiplier(10)->Range(1000, 1000000)->UseRealTime();

BENCHMARK_MAIN();

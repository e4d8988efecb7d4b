#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <numeric>

#include "sage/kernels.hpp"
#include "test_util.hpp"

using namespace sage;
namespace k = sage::kernels;

namespace {

std::vector<double> prob_table(const TabularPolicy& p) {
  std::vector<double> t(p.num_contexts() * static_cast<std::size_t>(p.vocab_size()));
  k::context_prob_table_serial(p, t);
  return t;
}

std::vector<double> normals(std::size_t n, std::uint64_t seed, double scale) {
  Rng rng = make_rng(seed, 0);
  std::vector<double> v(n);
  for (double& x : v) x = scale * standard_normal(rng);
  return v;
}

template <class F>
auto with_threads(int n, F f) {
  const int before = omp_get_max_threads();
  omp_set_num_threads(n);
  auto r = f();
  omp_set_num_threads(before);
  return r;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("trajectory probabilities: serial and parallel agree exactly") {
  const TreeShape shape(7, 5);
  Rng rng = make_rng(3, 0);
  const auto pol = testing::random_policy(shape, rng, 2.0);
  const auto table = prob_table(pol);
  std::vector<double> omp_table(table.size());
  k::context_prob_table_omp(pol, omp_table);
  CHECK(omp_table == table);

  std::vector<double> a(shape.num_trajectories()), b(a.size());
  k::trajectory_probs_serial(shape, table, a);
  k::trajectory_probs_omp(shape, table, b);
  CHECK(a == b);
  CHECK(std::accumulate(a.begin(), a.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("log-sum-exp") {
  const auto v = normals(100003, 5, 30.0);
  // Oracle: plain shifted sum in long double.
  long double m = *std::max_element(v.begin(), v.end());
  long double s = 0.0L;
  for (double x : v) s += std::exp(static_cast<long double>(x) - m);
  const double oracle = static_cast<double>(m + std::log(s));
  CHECK(k::log_sum_exp_serial(v) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(k::log_sum_exp_omp(v) == doctest::Approx(oracle).epsilon(1e-14));

  const double one = with_threads(1, [&] { return k::log_sum_exp_omp(v); });
  const double many = with_threads(4, [&] { return k::log_sum_exp_omp(v); });
  CHECK(one == many);

  CHECK(k::log_sum_exp_serial(std::vector<double>{}) == -INFINITY);
  CHECK(k::log_sum_exp_omp(std::vector<double>{-INFINITY, -INFINITY}) == -INFINITY);
  CHECK(k::log_sum_exp_serial(std::vector<double>{1000.0, 1000.0}) ==
        doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("normalized log weights") {
  auto v = normals(50000, 6, 10.0);
  v[17] = -INFINITY;
  std::vector<double> a(v.size()), b(v.size());
  k::normalize_log_weights_serial(v, a);
  k::normalize_log_weights_omp(v, b);
  CHECK(a[17] == 0.0);
  CHECK(std::accumulate(a.begin(), a.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, testing::rel_err(a[i], b[i], 1e-300));
  CHECK(worst < 1e-12);
  const std::vector<double> dead{-INFINITY, -INFINITY};
  std::vector<double> out(2);
  CHECK_THROWS(k::normalize_log_weights_serial(dead, out));
}

TEST_CASE("tilted normalization against a log-domain oracle") {
  for (double spread : {1.0, 50.0, 800.0}) {
    auto base = normals(20000, 8, 1.0);
    for (double& x : base) x = std::exp(x);
    base[3] = 0.0;
    const auto lf = normals(base.size(), 9, spread);
    std::vector<double> lw(base.size()), oracle(base.size());
    for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = base[i] > 0.0 ? std::log(base[i]) + lf[i] : -INFINITY;
    const double lz = k::normalize_log_weights_serial(lw, oracle);

    std::vector<double> a(base.size()), b(base.size());
    CHECK(k::normalize_tilted_serial(base, lf, a) == doctest::Approx(lz).epsilon(1e-12));
    CHECK(k::normalize_tilted_omp(base, lf, b) == doctest::Approx(lz).epsilon(1e-12));
    CHECK(a[3] == 0.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (oracle[i] < 1e-250) continue;
      worst = std::max(worst, testing::rel_err(a[i], oracle[i], 1e-300));
      worst = std::max(worst, testing::rel_err(b[i], oracle[i], 1e-300));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("the largest factor keeps its base value exactly") {
  const std::vector<double> base{0.999999, 1e-6};
  const std::vector<double> lf{0.0, -1.0};
  std::vector<double> out(2);
  k::normalize_tilted_serial(base, lf, out);
  const double z = 0.999999 + 1e-6 * std::exp(-1.0);
  CHECK(out[0] == doctest::Approx(0.999999 / z).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(1e-6 * std::exp(-1.0) / z).epsilon(1e-15));
}

TEST_CASE("parallel tilted results do not depend on the thread count") {
  auto base = normals(30011, 10, 1.0);
  for (double& x : base) x = std::exp(x);
  const auto lf = normals(base.size(), 11, 3.0);
  auto run = [&] {
    std::vector<double> out(base.size());
    k::normalize_tilted_omp(base, lf, out);
    return out;
  };
  CHECK(with_threads(1, run) == with_threads(3, run));
}

}  // TEST_SUITE

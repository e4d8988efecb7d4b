#include "sage/guides.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sage/error.hpp"

namespace sage {

namespace {

GuideEvaluation finish(std::vector<double> factors) {
  GuideEvaluation e;
  e.factors = std::move(factors);
  e.log_product = guide_log_product(e);
  return e;
}

void check_schedule(const CosineSchedule& s, const char* name) {
  if (!(s.lo <= s.hi)) throw DomainError(std::string(name) + ": schedule needs lo <= hi");
  if (!(s.decay > 0.0 && s.decay <= 1.0)) {
    throw DomainError(std::string(name) + ": decay must lie in (0, 1]");
  }
  if (s.periods < 1) throw DomainError(std::string(name) + ": periods must be positive");
}

}  // namespace

double schedule_value(const CosineSchedule& s, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) throw DomainError("total_steps must be positive");
  if (step < 0 || step >= total_steps) throw DomainError("schedule step out of range");
  const double x = static_cast<double>(step) * s.periods / static_cast<double>(total_steps);
  const double p = std::floor(x);
  const double phi = 2.0 * std::numbers::pi * (x - p);
  const double envelope = std::pow(s.decay, p);
  const double v = s.lo + (s.hi - s.lo) * envelope * 0.5 * (1.0 + std::cos(phi));
  return std::clamp(v, s.lo, s.hi);
}

std::string to_string(GuideFamily family) {
  switch (family) {
    case GuideFamily::constant: return "constant";
    case GuideFamily::random: return "random";
    case GuideFamily::token: return "token";
    case GuideFamily::branch: return "branch";
  }
  return "constant";
}

GuideFamily parse_guide_family(const std::string& name) {
  if (name == "constant") return GuideFamily::constant;
  if (name == "random") return GuideFamily::random;
  if (name == "token") return GuideFamily::token;
  if (name == "branch") return GuideFamily::branch;
  throw DomainError("unknown guide family '" + name + "'");
}

void GuideSpec::validate() const {
  check_schedule(epsilon, "eps");
  check_schedule(random_sigma, "sigma");
  check_schedule(alpha, "alpha");
  check_schedule(token_sigma, "sigma");
  if (epsilon.lo < 0.0 || epsilon.hi > 1.0) throw DomainError("eps must lie in [0, 1]");
  if (random_sigma.lo < 0.0 || token_sigma.lo < 0.0) throw DomainError("sigma must be >= 0");
  if (gamma < 0.0) throw DomainError("gamma must be >= 0");
  if (tau < 0.0) throw DomainError("tau must be >= 0");
  if (!(factor_floor > 0.0)) throw DomainError("factor_floor must be positive");
}

GuideParams resolve_guide_params(const GuideSpec& spec, std::int64_t step,
                                 std::int64_t total_steps) {
  GuideParams p;
  switch (spec.family) {
    case GuideFamily::random:
      p.epsilon = schedule_value(spec.epsilon, step, total_steps);
      p.sigma = schedule_value(spec.random_sigma, step, total_steps);
      break;
    case GuideFamily::token:
      p.alpha = schedule_value(spec.alpha, step, total_steps);
      p.sigma = schedule_value(spec.token_sigma, step, total_steps);
      break;
    case GuideFamily::constant:
    case GuideFamily::branch:
      break;
  }
  return p;
}

GuideEvaluation evaluate_guide_random(std::size_t length, double eps, double sigma, Rng& rng,
                                      double factor_floor) {
  if (eps < 0.0 || eps > 1.0) throw DomainError("eps must lie in [0, 1]");
  if (sigma < 0.0) throw DomainError("sigma must be >= 0");
  std::vector<double> f(length);
  for (auto& x : f) {
    const double u = uniform01(rng);
    const double z = standard_normal(rng);
    x = u < eps ? 1.0 : std::max(factor_floor, 1.0 + sigma * z);
  }
  return finish(std::move(f));
}

GuideEvaluation evaluate_guide_token(std::span<const double> surprisals, double alpha,
                                     double sigma, Rng& rng, double factor_floor) {
  if (sigma < 0.0) throw DomainError("sigma must be >= 0");
  std::vector<double> f(surprisals.size());
  if (surprisals.empty()) return finish(std::move(f));
  const auto [lo_it, hi_it] = std::minmax_element(surprisals.begin(), surprisals.end());
  const double lo = *lo_it;
  const double span = *hi_it - lo;
  for (std::size_t t = 0; t < f.size(); ++t) {
    if (!std::isfinite(surprisals[t]) || surprisals[t] < 0.0) {
      throw DomainError("surprisals must be finite and nonnegative");
    }
    const double w = span > 0.0 ? (surprisals[t] - lo) / span : 0.0;
    const double z = standard_normal(rng);
    f[t] = std::max(factor_floor, 1.0 + alpha * w + w * sigma * z);
  }
  return finish(std::move(f));
}

GuideEvaluation evaluate_guide_branch(std::span<const double> entropies, double gamma,
                                      double tau) {
  std::vector<double> f(entropies.size());
  for (std::size_t t = 0; t < f.size(); ++t) {
    if (entropies[t] < 0.0) throw DomainError("entropies must be nonnegative");
    f[t] = 1.0 + gamma * std::max(entropies[t] - tau, 0.0);
  }
  return finish(std::move(f));
}

double guide_log_product(const GuideEvaluation& eval) {
  double s = 0.0;
  for (double f : eval.factors) {
    if (!(f > 0.0)) throw DomainError("guide factors must be positive");
    s += std::log(f);
  }
  return s;
}

GuideEvaluation evaluate_guide(const GuideSpec& spec, const GuideParams& params,
                               std::span<const TokenRecord> records, Rng& rng) {
  switch (spec.family) {
    case GuideFamily::constant:
      return finish(std::vector<double>(records.size(), 1.0));
    case GuideFamily::random:
      return evaluate_guide_random(records.size(), params.epsilon, params.sigma, rng,
                                   spec.factor_floor);
    case GuideFamily::token: {
      std::vector<double> s(records.size());
      std::transform(records.begin(), records.end(), s.begin(),
                     [](const TokenRecord& r) { return r.surprisal; });
      return evaluate_guide_token(s, params.alpha, params.sigma, rng, spec.factor_floor);
    }
    case GuideFamily::branch: {
      std::vector<double> h(records.size());
      std::transform(records.begin(), records.end(), h.begin(),
                     [](const TokenRecord& r) { return r.entropy; });
      return evaluate_guide_branch(h, spec.gamma, spec.tau);
    }
  }
  throw DomainError("unknown guide family");
}

}  // namespace sage

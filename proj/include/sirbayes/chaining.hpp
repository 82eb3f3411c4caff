#pragma once

// Posterior-as-prior chaining: a converged posterior for one region becomes a
// moment-matched truncated normal prior for the next.

#include <cmath>
#include <stdexcept>
#include <string>

#include "sirbayes/model.hpp"
#include "sirbayes/sampler.hpp"

namespace sirbayes {

inline constexpr std::size_t kMinChainingDraws = 1000;
inline constexpr double kChainingMaxRhat = 1.05;
inline constexpr double kChainingSdFloor = 1e-6;

// Moments are taken on the prior scale of `param` (1 / gamma for gamma,
// population fractions for s1 and i1) and truncated to the support of the
// original prior entry.
inline PriorDescriptor chain_posterior_to_prior(const PosteriorDraws& draws, const std::string& param,
                                                const PriorSpec& original, double population) {
  if (draws.size() < kMinChainingDraws)
    throw std::invalid_argument("chaining " + param + " needs at least " + std::to_string(kMinChainingDraws) +
                                " draws, got " + std::to_string(draws.size()));
  const std::size_t col = draws.index_of(param);
  if (col < draws.r_hat.size()) {
    const double rh = draws.r_hat[col];
    if (!std::isnan(rh) && !(rh < kChainingMaxRhat))
      throw std::invalid_argument("chaining " + param + " needs R-hat below 1.05, got " + std::to_string(rh));
  }
  double sum = 0.0, sum_sq = 0.0;
  const std::size_t n = draws.size();
  std::vector<double> v(n);
  for (std::size_t r = 0; r < n; ++r) {
    v[r] = prior_scale_value(param, draws.at(r, col), population);
    sum += v[r];
  }
  const double mean = sum / static_cast<double>(n);
  for (double x : v) sum_sq += (x - mean) * (x - mean);
  const double sd = std::max(std::sqrt(sum_sq / static_cast<double>(n - 1)), kChainingSdFloor);
  const PriorDescriptor& base = original.entry(param);
  PriorDescriptor out = PriorDescriptor::empirical(mean, sd, base.lo, base.hi);
  out.validate(param);
  return out;
}

// Returns `spec` with each named entry replaced by its chained posterior.
inline PriorSpec chain_priors(const PosteriorDraws& draws, const std::vector<std::string>& params, PriorSpec spec,
                              double population) {
  for (const auto& name : params) spec.entry(name) = chain_posterior_to_prior(draws, name, spec, population);
  return spec;
}

}  // namespace sirbayes

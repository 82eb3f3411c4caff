#pragma once

// Convergence diagnostics: rank-normalized split R-hat and bulk effective
// sample size, plus sample quantiles and goodness-of-fit helpers.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

namespace sirbayes {

using ChainSet = std::vector<std::vector<double>>;

namespace detail {

inline double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

inline double variance_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Each chain cut into two halves; the middle draw is dropped for odd lengths.
inline ChainSet split_chains(const ChainSet& chains) {
  ChainSet out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

// Pooled ranks (ties averaged) mapped through the normal quantile with the
// (r - 3/8) / (S + 1/4) offset.
inline ChainSet rank_normalize(const ChainSet& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t k = 0; k < chains[c].size(); ++k) pooled.emplace_back(chains[c][k], pooled.size());
  const std::size_t total = pooled.size();
  std::vector<double> rank(total);
  std::sort(pooled.begin(), pooled.end());
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && pooled[j + 1].first == pooled[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[pooled[k].second] = avg;
    i = j + 1;
  }
  static const boost::math::normal_distribution<double> unit;
  ChainSet out = chains;
  std::size_t idx = 0;
  for (auto& c : out)
    for (double& v : c) v = boost::math::quantile(unit, (rank[idx++] - 0.375) / (static_cast<double>(total) + 0.25));
  return out;
}

inline double basic_rhat(const ChainSet& chains) {
  const std::size_t m = chains.size();
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = mean_of(chains[c]);
    vars[c] = variance_of(chains[c]);
  }
  const double w = mean_of(vars);
  const double b = n * variance_of(means);
  if (w == 0.0) return b > 0.0 ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

// Biased autocovariance at a single lag.
inline double autocov(const std::vector<double>& x, double mean, std::size_t lag) {
  double s = 0.0;
  for (std::size_t i = 0; i + lag < x.size(); ++i) s += (x[i] - mean) * (x[i + lag] - mean);
  return s / static_cast<double>(x.size());
}

// Geyer initial monotone sequence estimator across chains. Lags are computed
// on demand so well-mixing chains stay cheap.
inline double ess_of(const ChainSet& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = mean_of(chains[c]);
    vars[c] = variance_of(chains[c]);
  }
  const double mean_var = mean_of(vars);
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) var_plus += variance_of(means);
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  auto rho_at = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) acov += autocov(chains[c], means[c], lag);
    acov /= static_cast<double>(m);
    return 1.0 - (mean_var - acov) / var_plus;
  };

  std::vector<double> rho(n + 1, 0.0);
  rho[0] = 1.0;
  double even = 1.0;
  double odd = n > 1 ? rho_at(1) : 0.0;
  rho[1] = odd;
  std::size_t t = 1;
  while (t + 5 < n && even + odd > 0.0) {
    even = rho_at(t + 1);
    odd = rho_at(t + 2);
    if (even + odd >= 0.0) {
      rho[t + 1] = even;
      rho[t + 2] = odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (even > 0.0) rho[max_t + 1] = even;
  for (std::size_t k = 1; k + 2 <= max_t; k += 2) {
    if (rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k]) {
      rho[k + 1] = 0.5 * (rho[k - 1] + rho[k]);
      rho[k + 2] = rho[k + 1];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0;
  for (std::size_t k = 0; k <= max_t; ++k) tau += 2.0 * rho[k];
  tau += rho[max_t + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

inline void check_chain_shape(const ChainSet& chains, std::size_t min_chains) {
  if (chains.size() < min_chains) throw std::invalid_argument("diagnostic needs at least two chains");
  for (const auto& c : chains)
    if (c.size() != chains.front().size() || c.size() < 4)
      throw std::invalid_argument("chains must have equal length of at least four draws");
}

inline bool all_equal(const ChainSet& chains) {
  const double v = chains.front().front();
  for (const auto& c : chains)
    for (double x : c)
      if (x != v) return false;
  return true;
}

}  // namespace detail

// Maximum of the bulk and folded rank-normalized split R-hat. NaN when every
// draw is identical; +inf when each chain is constant but chains disagree.
inline double split_rhat(const ChainSet& chains) {
  detail::check_chain_shape(chains, 1);
  if (detail::all_equal(chains)) return std::numeric_limits<double>::quiet_NaN();
  const ChainSet split = detail::split_chains(chains);
  const double bulk = detail::basic_rhat(detail::rank_normalize(split));
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2), pooled.end());
  const double med = pooled[pooled.size() / 2];
  ChainSet folded = split;
  for (auto& c : folded)
    for (double& v : c) v = std::abs(v - med);
  const double tail = detail::all_equal(folded) ? bulk : detail::basic_rhat(detail::rank_normalize(folded));
  if (std::isnan(bulk) || std::isnan(tail)) return std::isnan(bulk) ? tail : bulk;
  return std::max(bulk, tail);
}

// Bulk effective sample size on rank-normalized split chains.
inline double bulk_ess(const ChainSet& chains) {
  detail::check_chain_shape(chains, 1);
  if (detail::all_equal(chains)) return std::numeric_limits<double>::quiet_NaN();
  return detail::ess_of(detail::rank_normalize(detail::split_chains(chains)));
}

struct ParameterDiagnostics {
  double r_hat = 0.0;
  double ess = 0.0;
};

// Per-parameter diagnostics; `columns[j]` holds one vector per chain.
inline std::vector<ParameterDiagnostics> diagnostics(const std::vector<ChainSet>& columns) {
  std::vector<ParameterDiagnostics> out;
  for (const auto& chains : columns) {
    detail::check_chain_shape(chains, 2);
    if (chains.front().size() < 100) throw std::invalid_argument("diagnostics need at least 100 draws per chain");
    out.push_back({split_rhat(chains), bulk_ess(chains)});
  }
  return out;
}

// Linear-interpolation (type 7) quantile of an ascending-sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw std::invalid_argument("quantile level must lie in [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> sample, double prob) {
  std::sort(sample.begin(), sample.end());
  return quantile_sorted(sample, prob);
}

// Pearson chi-square test of equal bin probabilities; returns the p-value.
inline double chi_square_uniform_pvalue(const std::vector<std::size_t>& counts) {
  if (counts.size() < 2) throw std::invalid_argument("chi-square test needs at least two bins");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total == 0.0) throw std::invalid_argument("chi-square test needs at least one observation");
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0.0;
  for (std::size_t c : counts) stat += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  const boost::math::chi_squared_distribution<double> dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
template <class Cdf>
double ks_statistic(std::vector<double> sample, Cdf cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

}  // namespace sirbayes

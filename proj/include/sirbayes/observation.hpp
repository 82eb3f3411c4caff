#pragma once

// Log-likelihood terms linking an SIR trajectory to reported deaths,
// random-sample prevalence surveys and aggregated positive tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sirbayes/dynamics.hpp"

namespace sirbayes {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double normal_logpdf(double x, double mean, double variance) {
  const double z = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + z * z / variance);
}

// ---------------------------------------------------------------------------
// Time from infection to death, conditional on death.

struct DelayDistribution {
  std::vector<double> pmf;  // tau_0 .. tau_m

  std::size_t m() const noexcept { return pmf.empty() ? 0 : pmf.size() - 1; }
  double mean() const noexcept {
    double acc = 0.0;
    for (std::size_t s = 0; s < pmf.size(); ++s) acc += static_cast<double>(s) * pmf[s];
    return acc;
  }
};

namespace detail {

// NegativeBinomial(shape, p) with p = 1/(scale+1): number of failures before
// `shape` successes, mean shape*scale.
inline double negbin_logpmf(std::size_t k, double shape, double scale) {
  const double p = 1.0 / (scale + 1.0);
  const double kd = static_cast<double>(k);
  return std::lgamma(kd + shape) - std::lgamma(shape) - std::lgamma(kd + 1.0) + shape * std::log(p) +
         kd * std::log1p(-p);
}

inline void check_delay_args(double shape, double scale) {
  if (!(shape > 0.0) || !std::isfinite(shape)) throw std::invalid_argument("delay shape must be positive");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("delay scale must be positive");
}

inline DelayDistribution renormalized(std::vector<double> pmf) {
  double total = 0.0;
  for (double v : pmf) total += v;
  for (double& v : pmf) v /= total;
  return {std::move(pmf)};
}

}  // namespace detail

// Truncates at the smallest m whose CDF reaches quantile_cut, then renormalizes.
inline DelayDistribution build_delay_pmf(double shape, double scale, double quantile_cut) {
  detail::check_delay_args(shape, scale);
  if (!(quantile_cut > 0.0 && quantile_cut < 1.0)) throw std::invalid_argument("quantile cut must lie in (0, 1)");
  std::vector<double> pmf;
  double cdf = 0.0;
  // Hard cap keeps a pathological cut near 1 from looping forever.
  constexpr std::size_t kMaxSupport = 100000;
  for (std::size_t k = 0; k < kMaxSupport; ++k) {
    const double p = std::exp(detail::negbin_logpmf(k, shape, scale));
    pmf.push_back(p);
    cdf += p;
    if (cdf >= quantile_cut) break;
  }
  return detail::renormalized(std::move(pmf));
}

// Fixed truncation horizon m, renormalized.
inline DelayDistribution build_delay_pmf_truncated(double shape, double scale, std::size_t m) {
  detail::check_delay_args(shape, scale);
  std::vector<double> pmf(m + 1);
  for (std::size_t k = 0; k <= m; ++k) pmf[k] = std::exp(detail::negbin_logpmf(k, shape, scale));
  return detail::renormalized(std::move(pmf));
}

// Default time-to-death law: NegBin(21, 1/(1.1+1)) cut at 40 days.
inline DelayDistribution default_delay() { return build_delay_pmf_truncated(21.0, 1.1, 40); }

// ---------------------------------------------------------------------------
// Deaths.

inline std::vector<double> expected_deaths(std::span<const double> nu, double ifr, const DelayDistribution& delay) {
  if (!(ifr >= 0.0 && ifr <= 1.0)) throw std::invalid_argument("IFR must lie in [0, 1]");
  std::vector<double> mu(nu.size(), 0.0);
  const std::size_t width = delay.pmf.size();
  for (std::size_t k = 0; k < nu.size(); ++k) {
    if (nu[k] < 0.0) throw std::invalid_argument("new infections must be non-negative");
    const double v = nu[k];
    if (v == 0.0) continue;
    const std::size_t stop = std::min(nu.size(), k + width);
    for (std::size_t t = k; t < stop; ++t) mu[t] += v * delay.pmf[t - k];
  }
  for (double& m : mu) m *= ifr;
  return mu;
}

inline double poisson_logpmf(double count, double mean) {
  if (mean == 0.0) return count == 0.0 ? 0.0 : kNegInf;
  return count * std::log(mean) - mean - std::lgamma(count + 1.0);
}

// Returns kNegInf when some day has zero expected deaths but a positive count.
inline double deaths_loglik(std::span<const double> observed, std::span<const double> expected) {
  if (observed.size() != expected.size()) throw std::invalid_argument("deaths and expectations differ in length");
  double total = 0.0;
  for (std::size_t t = 0; t < observed.size(); ++t) {
    const double d = observed[t];
    if (!(d >= 0.0) || d != std::floor(d)) throw std::invalid_argument("death counts must be non-negative integers");
    total += poisson_logpmf(d, expected[t]);
    if (total == kNegInf) return kNegInf;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Prevalence surveys.

enum class SurveyKind { viral, sero };

inline const char* to_string(SurveyKind k) { return k == SurveyKind::viral ? "viral" : "sero"; }

inline SurveyKind survey_kind_from_string(const std::string& s) {
  if (s == "viral") return SurveyKind::viral;
  if (s == "sero") return SurveyKind::sero;
  throw std::invalid_argument("unknown survey kind '" + s + "'");
}

struct SurveyObservation {
  SurveyKind kind = SurveyKind::viral;
  double estimate = 0.0;
  double sample_size = 0.0;
  std::size_t start_day = 0;  // inclusive, 0-based observation day
  std::size_t end_day = 0;    // inclusive

  void validate(std::size_t horizon) const {
    if (!(estimate > 0.0 && estimate < 1.0)) throw std::invalid_argument("survey estimate must lie in (0, 1)");
    if (!(sample_size >= 1.0)) throw std::invalid_argument("survey sample size must be at least 1");
    if (end_day < start_day || end_day >= horizon) throw std::invalid_argument("survey window outside horizon");
  }
};

// Window mean of I/N (viral) or R/N (sero). Day d reads the end-of-day state.
inline double survey_prevalence(const SirTrajectory& traj, const SurveyObservation& obs) {
  double acc = 0.0;
  for (std::size_t d = obs.start_day; d <= obs.end_day; ++d) {
    const SirState& st = traj.states.at(d + 1);
    acc += obs.kind == SurveyKind::viral ? st.i : st.r;
  }
  const double days = static_cast<double>(obs.end_day - obs.start_day + 1);
  return acc / (traj.population * days);
}

// Normal approximation to the binomial with the variance taken at the model's
// prevalence, so the log-variance term depends on the trajectory.
inline double survey_loglik_at(double theta, const SurveyObservation& obs) {
  if (!(theta > 0.0 && theta < 1.0)) return kNegInf;
  return normal_logpdf(obs.estimate, theta, theta * (1.0 - theta) / obs.sample_size);
}

inline double survey_loglik(const SirTrajectory& traj, const SurveyObservation& obs) {
  if (obs.end_day < obs.start_day || obs.end_day + 1 >= traj.states.size())
    throw std::invalid_argument("survey window outside trajectory");
  return survey_loglik_at(survey_prevalence(traj, obs), obs);
}

// ---------------------------------------------------------------------------
// Positive tests, aggregated over L-day periods.

struct TestPeriod {
  std::size_t start_day = 0;  // inclusive
  std::size_t end_day = 0;    // inclusive
  double cases = 0.0;
  double tests = 0.0;
  double cum_cases_end = 0.0;
  double cum_tests_end = 0.0;

  double cum_tests_before() const noexcept { return cum_tests_end - tests; }
};

// Share of infections appearing as confirmed cases given cumulative tests.
inline double case_fraction(double phi, double cum_tests, double n) { return phi * std::sqrt(cum_tests / n); }

inline double cumulative_incidence(const SirState& s) { return s.i + s.r; }

struct PeriodMoments {
  double mean = 0.0;
  double variance = 0.0;
};

inline PeriodMoments period_moments(const SirTrajectory& traj, const TestPeriod& p, double phi, double eta, double n) {
  const double x_end = cumulative_incidence(traj.states.at(p.end_day + 1));
  const double x_before = cumulative_incidence(traj.states.at(p.start_day));
  const double mean = case_fraction(phi, p.cum_tests_end, n) * x_end - case_fraction(phi, p.cum_tests_before(), n) * x_before;
  return {mean, eta * eta * p.tests / n};
}

inline double testing_loglik(const SirTrajectory& traj, std::span<const TestPeriod> periods, double phi, double eta,
                             double n) {
  if (!(phi > 0.0) || !(eta > 0.0)) throw std::invalid_argument("phi and eta must be positive");
  double total = 0.0;
  for (const TestPeriod& p : periods) {
    if (p.tests <= 0.0) return kNegInf;
    const PeriodMoments mom = period_moments(traj, p, phi, eta, n);
    total += normal_logpdf(p.cases, mom.mean, mom.variance);
  }
  return total;
}

struct CaseMeanParts {
  double new_infection_share = 0.0;
  double backlog_share = 0.0;
};

// Splits the expected day-t case count into phi_t * nu_t and
// (phi_t - phi_{t-1}) * (I + R)_{t-1}. cum_tests is indexed by day.
inline CaseMeanParts decompose_case_mean(const SirTrajectory& traj, double phi, std::span<const double> cum_tests,
                                         double n, std::size_t t) {
  if (t < 1 || t >= cum_tests.size() || t >= traj.nu.size()) throw std::out_of_range("day outside trajectory");
  const double phi_now = case_fraction(phi, cum_tests[t], n);
  const double phi_prev = case_fraction(phi, cum_tests[t - 1], n);
  return {phi_now * traj.nu[t], (phi_now - phi_prev) * cumulative_incidence(traj.states[t])};
}

}  // namespace sirbayes

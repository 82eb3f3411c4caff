#pragma once

// Synthetic data from known parameters, and simulation-based calibration of
// the full fit pipeline.

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sirbayes/data_io.hpp"
#include "sirbayes/diagnostics.hpp"
#include "sirbayes/model.hpp"
#include "sirbayes/sampler.hpp"

namespace sirbayes {

struct SurveyDesign {
  SurveyKind kind = SurveyKind::sero;
  double sample_size = 3000.0;
  std::size_t start_day = 0;
  std::size_t end_day = 0;
};

struct GroundTruth {
  ParameterVector params;
  double population = 1.0e6;
  std::vector<double> tests;  // daily tests, one per model day
  std::vector<SurveyDesign> surveys;
  std::vector<double> second_doses;  // dose schedule carried for projection fixtures
  std::size_t period_length = 7;
  std::string region = "SYN";
  Day first_day = Day{std::chrono::year{2020} / 3 / 1};
  DelayDistribution delay = default_delay();

  std::size_t horizon() const noexcept { return params.horizon(); }

  void validate() const {
    const auto& p = params;
    if (p.beta.empty()) throw std::invalid_argument("ground truth needs a contact path");
    if (!(p.ifr >= 0.0 && p.ifr <= 1.0)) throw std::invalid_argument("ground-truth ifr must lie in [0, 1]");
    if (!(p.gamma > 0.0 && p.gamma <= 1.0)) throw std::invalid_argument("ground-truth gamma must lie in (0, 1]");
    if (!(p.sigma > 0.0 && p.phi > 0.0 && p.eta > 0.0)) throw std::invalid_argument("sigma, phi and eta must be positive");
    if (!(p.s1 >= 0.0 && p.i1 >= 0.0 && p.s1 + p.i1 <= population)) throw std::invalid_argument("invalid initial state");
    for (double b : p.beta)
      if (!(b >= 0.0)) throw std::invalid_argument("contact rates must be non-negative");
    if (tests.size() != horizon()) throw std::invalid_argument("tests series must cover the horizon");
    for (double t : tests)
      if (!(t >= 0.0)) throw std::invalid_argument("tests must be non-negative");
    for (const auto& s : surveys)
      if (s.end_day < s.start_day || s.end_day >= horizon()) throw std::invalid_argument("survey window outside horizon");
    if (period_length < kMinPeriodLength) throw std::invalid_argument("period length must be at least 7 days");
  }
};

// Daily tests following capacity / (1 + exp(-(t - midpoint) / scale)), rounded.
inline std::vector<double> logistic_test_ramp(std::size_t horizon, double capacity = 3000.0, double midpoint = 50.0,
                                              double scale = 10.0) {
  std::vector<double> out(horizon);
  for (std::size_t t = 0; t < horizon; ++t)
    out[t] = std::round(capacity / (1.0 + std::exp(-(static_cast<double>(t) - midpoint) / scale)));
  return out;
}

inline constexpr std::size_t kDeskHorizon = 120;
inline constexpr double kDeskPopulation = 1.0e6;

// The default desk-scale fixture: an early wave suppressed around day 40 and
// a mild resurgence after day 85.
inline GroundTruth desk_truth(std::size_t horizon = kDeskHorizon) {
  GroundTruth g;
  auto& p = g.params;
  p.ifr = 0.007;
  p.sigma = 0.01;
  p.gamma = 1.0 / 8.5;
  p.s1 = 0.97 * kDeskPopulation;
  p.i1 = 200.0;
  p.phi = 1.0;
  p.eta = 20000.0;
  p.beta.resize(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const double d = static_cast<double>(t);
    p.beta[t] = 0.1 + 0.2 / (1.0 + std::exp((d - 40.0) / 3.0)) + 0.04 / (1.0 + std::exp(-(d - 85.0) / 5.0));
  }
  g.population = kDeskPopulation;
  g.tests = logistic_test_ramp(horizon);
  const std::size_t mid = horizon / 2;
  g.surveys = {{SurveyKind::viral, 3000.0, mid, std::min(mid + 4, horizon - 1)},
               {SurveyKind::sero, 3000.0, mid, std::min(mid + 4, horizon - 1)}};
  g.second_doses.assign(horizon, 0.0);
  return g;
}

namespace detail {

// Splits a non-negative integer total over days in proportion to weights
// using largest remainders, so the parts are integers summing to the total.
inline std::vector<double> apportion(double total, const std::vector<double>& weights) {
  std::vector<double> w(weights.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::max(weights[k], 0.0);
  double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(wsum > 0.0)) {
    std::fill(w.begin(), w.end(), 1.0);
    wsum = static_cast<double>(w.size());
  }
  std::vector<double> out(w.size());
  std::vector<std::pair<double, std::size_t>> rem;
  double given = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double exact = total * w[k] / wsum;
    out[k] = std::floor(exact);
    given += out[k];
    rem.emplace_back(exact - out[k], k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; given < total && k < rem.size(); ++k, given += 1.0) out[rem[k].second] += 1.0;
  return out;
}

}  // namespace detail

// Runs the likelihoods generatively. Deaths are Poisson; survey estimates are
// normal at the window prevalence (redrawn until inside (0, 1)); each test
// period's case total is normal with the aggregated mean and variance,
// rounded and floored at zero, then spread over the period's days in
// proportion to their daily means.
inline RegionDataset generate(const GroundTruth& truth, std::uint64_t seed) {
  truth.validate();
  std::mt19937_64 rng(seed);
  const auto& p = truth.params;
  const std::size_t horizon = truth.horizon();
  const double n = truth.population;
  const SirTrajectory traj = trajectory_of(p, n);

  RegionDataset ds;
  ds.region_code = truth.region;
  ds.population = n;
  ds.first_day = truth.first_day;
  ds.tests = truth.tests;
  ds.deaths.resize(horizon);
  ds.cases.assign(horizon, 0.0);

  const auto mu = expected_deaths(traj.nu, p.ifr, truth.delay);
  for (std::size_t t = 0; t < horizon; ++t) {
    std::poisson_distribution<long long> pois(mu[t]);
    ds.deaths[t] = mu[t] > 0.0 ? static_cast<double>(pois(rng)) : 0.0;
  }

  // Cumulative tests through each day and the day's expected new cases.
  std::vector<double> cum_tests(horizon);
  std::partial_sum(truth.tests.begin(), truth.tests.end(), cum_tests.begin());
  std::vector<double> daily_mean(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const double before = t ? case_fraction(p.phi, cum_tests[t - 1], n) * cumulative_incidence(traj.states[t]) : 0.0;
    daily_mean[t] = case_fraction(p.phi, cum_tests[t], n) * cumulative_incidence(traj.states[t + 1]) - before;
  }

  // Periods depend on tests only; a trailing partial period is drawn the same way.
  auto periods = make_periods(ds, truth.period_length);
  if (!periods.empty() && periods.back().end_day + 1 < horizon) {
    TestPeriod tail{periods.back().end_day + 1, horizon - 1, 0.0, 0.0, 0.0, 0.0};
    for (std::size_t t = tail.start_day; t < horizon; ++t) tail.tests += truth.tests[t];
    tail.cum_tests_end = cum_tests[horizon - 1];
    periods.push_back(tail);
  }
  for (const auto& period : periods) {
    const auto mom = period_moments(traj, period, p.phi, p.eta, n);
    std::normal_distribution<double> z(mom.mean, std::sqrt(mom.variance));
    const double total = std::max(0.0, std::round(z(rng)));
    const std::vector<double> w(daily_mean.begin() + static_cast<std::ptrdiff_t>(period.start_day),
                                daily_mean.begin() + static_cast<std::ptrdiff_t>(period.end_day + 1));
    const auto parts = detail::apportion(total, w);
    std::copy(parts.begin(), parts.end(), ds.cases.begin() + static_cast<std::ptrdiff_t>(period.start_day));
  }

  for (const auto& design : truth.surveys) {
    SurveyObservation s{design.kind, 0.5, design.sample_size, design.start_day, design.end_day};
    const double theta = survey_prevalence(traj, s);
    std::normal_distribution<double> z(theta, std::sqrt(theta * (1.0 - theta) / design.sample_size));
    double est = z(rng);
    for (int k = 0; k < 1000 && !(est > 0.0 && est < 1.0); ++k) est = z(rng);
    if (!(est > 0.0 && est < 1.0)) throw std::runtime_error("survey prevalence too close to 0 or 1 to simulate");
    s.estimate = est;
    ds.surveys.push_back(s);
  }
  ds.periods = make_periods(ds, truth.period_length);
  return ds;
}

// Survey records in calendar form, for writing fixtures in the config format.
inline std::vector<SurveyRecord> survey_records(const RegionDataset& ds) {
  std::vector<SurveyRecord> out;
  for (const auto& s : ds.surveys)
    out.push_back({ds.region_code, s.kind, s.estimate, s.sample_size, ds.date_of(s.start_day), ds.date_of(s.end_day)});
  return out;
}

// ---------------------------------------------------------------------------
// Drawing ground truth from a prior.

// Scalars from their prior entries, with (S_1, I_1) redrawn until they fit in
// the population, and the contact path from the latent random walk.
template <class Rng>
GroundTruth sample_truth(const PriorSpec& prior, const GroundTruth& design, Rng& rng) {
  GroundTruth g = design;
  auto& p = g.params;
  const double n = g.population;
  p.ifr = prior.ifr.sample(rng);
  p.sigma = prior.sigma.sample(rng);
  p.gamma = 1.0 / prior.infectious_period.sample(rng);
  for (int attempt = 0;; ++attempt) {
    p.i1 = prior.infectious_fraction.sample(rng) * n;
    p.s1 = prior.susceptible_fraction.sample(rng) * n;
    if (p.s1 + p.i1 <= n) break;
    if (attempt > 10000) throw std::invalid_argument("prior leaves almost no room for S_1 + I_1 <= N");
  }
  p.phi = prior.phi.sample(rng);
  p.eta = prior.eta.sample(rng);
  std::normal_distribution<double> z(0.0, 1.0);
  p.beta.resize(design.horizon());
  p.beta[0] = prior.beta1.sample(rng);
  double w = contact_floor_inverse(p.beta[0]);
  for (std::size_t t = 1; t < p.beta.size(); ++t) {
    w += p.sigma * z(rng);
    p.beta[t] = contact_floor(w);
  }
  return g;
}

// Prior used to draw and fit calibration replications: the model's default
// priors narrowed to epidemics of the size the desk fixture represents.
inline PriorSpec calibration_prior() {
  PriorSpec s;
  s.beta1 = PriorDescriptor::uniform(0.2, 0.4);
  s.sigma = PriorDescriptor::uniform(0.002, 0.02);
  s.susceptible_fraction = PriorDescriptor::uniform(0.95, 0.998);
  s.infectious_fraction = PriorDescriptor::uniform(0.0001, 0.001);
  s.phi = PriorDescriptor::uniform(0.5, 2.0);
  s.eta = PriorDescriptor::uniform(15000.0, 30000.0);
  return s;
}

// ---------------------------------------------------------------------------
// Simulation-based calibration.

struct SbcOptions {
  std::vector<std::string> parameters{"ifr", "gamma"};
  std::size_t bins = 20;
  std::size_t rank_draws = 399;  // posterior draws kept per replication; bins * k - 1
  double ifr_generation_factor = 1.0;  // > 1 corrupts the generator for the negative control
  bool drop_data = false;              // prior-only replications
  GroundTruth design = desk_truth();
  double max_r_hat = 1.1;
  std::function<void(std::size_t, double)> progress;  // (replication, seconds)
};

struct SbcParameterResult {
  std::string name;
  std::vector<std::size_t> ranks;
  std::vector<std::size_t> histogram;
  double chi_square_p = 0.0;
  std::size_t covered = 0;  // replications whose central 95% interval covers truth
  double coverage = 0.0;
};

struct SbcResult {
  std::size_t replications = 0;
  std::vector<std::size_t> excluded;  // replications with max R-hat above the limit
  std::vector<double> max_r_hat;
  std::vector<double> divergence_rate;
  std::vector<SbcParameterResult> parameters;
  std::size_t rank_max = 0;  // ranks lie in [0, rank_max]

  const SbcParameterResult& parameter(const std::string& name) const {
    for (const auto& p : parameters)
      if (p.name == name) return p;
    throw std::out_of_range("no SBC result for " + name);
  }
};

// Rank of truth among evenly spaced draws, in [0, count].
inline std::size_t thinned_rank(const std::vector<double>& draws, double truth, std::size_t count) {
  if (draws.size() < count) throw std::invalid_argument("fewer posterior draws than rank draws");
  std::size_t rank = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t idx = k * draws.size() / count;
    if (draws[idx] < truth) ++rank;
  }
  return rank;
}

inline SbcResult sbc_run(const PriorSpec& truth_prior, std::size_t replications, const SamplerConfig& cfg,
                         const SbcOptions& opt = {}) {
  if (replications < 20) throw std::invalid_argument("simulation-based calibration needs at least 20 replications");
  if (opt.bins < 2 || (opt.rank_draws + 1) % opt.bins != 0)
    throw std::invalid_argument("rank draws + 1 must be a multiple of the bin count");
  cfg.validate();
  truth_prior.validate();
  SbcResult res;
  res.replications = replications;
  res.rank_max = opt.rank_draws;
  for (const auto& name : opt.parameters) res.parameters.push_back({name, {}, std::vector<std::size_t>(opt.bins, 0), 0.0, 0, 0.0});

  for (std::size_t r = 0; r < replications; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(r), 0x5bcu};
    std::mt19937_64 rng(seq);
    const GroundTruth truth = sample_truth(truth_prior, opt.design, rng);
    GroundTruth generator = truth;
    generator.params.ifr = std::min(1.0, truth.params.ifr * opt.ifr_generation_factor);
    const RegionDataset ds = generate(generator, rng());

    ObservationSet obs = to_observations(ds);
    obs.delay = truth.delay;
    if (opt.drop_data) {
      obs.death_series.clear();
      obs.surveys.clear();
      obs.periods.clear();
    }
    const SirPosterior post(obs, truth_prior);
    SamplerConfig run = cfg;
    run.seed = cfg.seed * 1000003ULL + r;
    const PosteriorDraws draws = sample(post, run);
    res.max_r_hat.push_back(draws.max_r_hat());
    res.divergence_rate.push_back(draws.divergence_rate());
    if (opt.progress) opt.progress(r, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (draws.max_r_hat() > opt.max_r_hat) {
      res.excluded.push_back(r);
      continue;
    }
    const auto truth_flat = truth.params.flatten();
    for (auto& pr : res.parameters) {
      const std::size_t col = draws.index_of(pr.name);
      const auto column = draws.column(col);
      const std::size_t rank = thinned_rank(column, truth_flat[col], opt.rank_draws);
      pr.ranks.push_back(rank);
      pr.histogram[rank * opt.bins / (opt.rank_draws + 1)] += 1;
      auto sorted = column;
      std::sort(sorted.begin(), sorted.end());
      if (quantile_sorted(sorted, 0.025) <= truth_flat[col] && truth_flat[col] <= quantile_sorted(sorted, 0.975)) ++pr.covered;
    }
  }
  const std::size_t kept = replications - res.excluded.size();
  for (auto& pr : res.parameters) {
    pr.chi_square_p = kept ? chi_square_uniform_pvalue(pr.histogram) : 0.0;
    pr.coverage = kept ? static_cast<double>(pr.covered) / static_cast<double>(kept) : 0.0;
  }
  return res;
}

}  // namespace sirbayes

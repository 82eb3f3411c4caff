#include "sirbayes/model.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

using namespace sirbayes;
using Catch::Approx;

namespace {

constexpr double kPopulation = 1.0e6;

ParameterVector random_parameters(std::mt19937_64& rng, std::size_t horizon) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  ParameterVector p;
  p.ifr = 0.002 + 0.02 * u(rng);
  p.sigma = 0.005 + 0.03 * u(rng);
  p.gamma = 1.0 / (6.0 + 5.0 * u(rng));
  p.i1 = kPopulation * (1e-4 + 8e-4 * u(rng));
  p.s1 = kPopulation * (0.92 + 0.07 * u(rng));
  p.phi = 0.2 + 3.0 * u(rng);
  p.eta = 200.0 + 3000.0 * u(rng);
  p.beta.resize(horizon);
  double b = 0.15 + 0.2 * u(rng);
  for (double& v : p.beta) {
    v = b;
    b = std::clamp(b + p.sigma * z(rng), 0.05, 0.6);
  }
  return p;
}

struct Fixture {
  ParameterVector truth;
  ObservationSet obs;
};

// Observations generated from a known parameter vector: Poisson deaths,
// surveys at the true window prevalence, period cases at their true mean.
Fixture make_fixture(std::size_t horizon, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Fixture f;
  f.truth = random_parameters(rng, horizon);
  const auto traj = trajectory_of(f.truth, kPopulation);
  ObservationSet& obs = f.obs;
  obs.population = kPopulation;
  obs.horizon = horizon;
  const auto mu = expected_deaths(traj.nu, f.truth.ifr, obs.delay);
  std::vector<double> deaths(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    std::poisson_distribution<long> pois(std::max(mu[t], 1e-12));
    deaths[t] = static_cast<double>(pois(rng));
  }
  obs.death_series.push_back(deaths);
  const std::size_t mid = horizon / 2;
  for (SurveyKind kind : {SurveyKind::viral, SurveyKind::sero}) {
    SurveyObservation s{kind, 0.5, 3000.0, mid, std::min(mid + 4, horizon - 1)};
    s.estimate = survey_prevalence(traj, s);
    obs.surveys.push_back(s);
  }
  double cum = 0.0;
  for (std::size_t start = 0; start + 7 <= horizon; start += 7) {
    const double tests = 5000.0 * static_cast<double>(start / 7 + 1);
    cum += tests;
    TestPeriod p{start, start + 6, 0.0, tests, 0.0, cum};
    p.cases = std::round(period_moments(traj, p, f.truth.phi, f.truth.eta, kPopulation).mean);
    obs.periods.push_back(p);
  }
  return f;
}

ObservationSet make_observations(std::size_t horizon, std::uint64_t seed) { return make_fixture(horizon, seed).obs; }

// Interior point: the generating parameters jittered on the unconstrained scale.
std::vector<double> jittered(const Fixture& f, std::mt19937_64& rng, double scale) {
  auto x = unconstrain(f.truth, PriorSpec{}, kPopulation);
  std::normal_distribution<double> z(0.0, scale);
  for (double& v : x) v += z(rng);
  return x;
}

double max_relative_gradient_error(const SirPosterior& post, const std::vector<double>& x) {
  std::vector<double> grad(x.size());
  const double f0 = post.log_density(x, grad);
  REQUIRE(std::isfinite(f0));
  double worst = 0.0;
  const double h = 1e-5;
  std::vector<double> xp = x, xm = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    const double fd = (post.log_density(xp) - post.log_density(xm)) / (2.0 * h);
    xp[k] = xm[k] = x[k];
    const double err = std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1.0});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("transform round trips", "[model][transform]") {
  std::mt19937_64 rng(21);
  const PriorSpec spec;
  for (int rep = 0; rep < 100; ++rep) {
    const ParameterVector p = random_parameters(rng, 1 + rep % 90);
    const auto x = unconstrain(p, spec, kPopulation);
    REQUIRE(x.size() == p.horizon() + 7);
    const auto back = constrain(x, spec, kPopulation).params.flatten();
    const auto orig = p.flatten();
    for (std::size_t k = 0; k < orig.size(); ++k) CHECK(std::abs(back[k] - orig[k]) <= 1e-10 * std::abs(orig[k]));
    const auto x2 = unconstrain(ParameterVector::unflatten(back), spec, kPopulation);
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(x2[k] - x[k]) <= 1e-10 * std::max(1.0, std::abs(x[k])));
  }
}

TEST_CASE("contact floor is a smooth bijection", "[model][transform]") {
  for (double b : {1e-3, 0.01, 0.1, 0.5, 2.0}) CHECK(contact_floor(contact_floor_inverse(b)) == Approx(b).epsilon(1e-12));
  CHECK(contact_floor(0.2) == Approx(0.2).epsilon(1e-8));
  CHECK(contact_floor(-1.0) >= 0.0);
  const double w = 0.013, h = 1e-7;
  CHECK(contact_floor_slope(w) == Approx((contact_floor(w + h) - contact_floor(w - h)) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("log prior terms", "[model][prior]") {
  const PriorSpec spec;
  CHECK(spec.ifr.log_density(0.015) == Approx(std::log(1.0 / 0.03)));
  CHECK(spec.ifr.log_density(0.031) == kNegInf);

  // Infectious-period prior peaks at 8.5 days.
  const auto& period = spec.infectious_period;
  CHECK(period.dlog_density(8.5) == 0.0);
  CHECK(period.log_density(8.5) > period.log_density(8.4));
  CHECK(period.log_density(8.5) > period.log_density(8.6));
  CHECK(period.log_density(5.4) == kNegInf);
  // Normalizing constant: mass of N(8.5, 1.5^2) on [5.5, 11.5] is erf(sqrt 2).
  const double z = 1.0 / (1.5 * std::sqrt(2.0 * std::numbers::pi));
  CHECK(period.log_density(8.5) == Approx(std::log(z / std::erf(std::sqrt(2.0)))).epsilon(1e-12));

  SECTION("constant contact path") {
    ParameterVector p;
    p.ifr = 0.01;
    p.beta.assign(12, 0.25);
    p.sigma = 0.05;
    p.gamma = 1.0 / 8.5;
    p.s1 = 0.95 * kPopulation;
    p.i1 = 0.0005 * kPopulation;
    p.phi = 1.0;
    p.eta = 100.0;
    const double scalar = std::log(1 / 0.03) + std::log(1 / 2.0) + std::log(1 / 0.3) + period.log_density(8.5) +
                          std::log(1 / 0.1) + std::log(1 / 0.001) + std::log(1 / 20.0) + std::log(1 / 5e4);
    const double walk = 11.0 * normal_logpdf(0.0, 0.0, 0.05 * 0.05);
    CHECK(log_prior(p, spec, kPopulation) == Approx(scalar + walk).epsilon(1e-12));

    p.s1 = 0.9996 * kPopulation;  // S_1 + I_1 > N
    CHECK(log_prior(p, spec, kPopulation) == kNegInf);
  }
}

TEST_CASE("log posterior gradient matches central finite differences", "[model][gradient]") {
  const PriorSpec spec;
  for (std::size_t horizon : {10u, 60u, 120u}) {
    const auto fixture = make_fixture(horizon, 100 + horizon);
    const SirPosterior post(fixture.obs, spec);
    std::mt19937_64 rng(4242 + horizon);
    double worst = 0.0;
    for (int point = 0; point < 20; ++point) worst = std::max(worst, max_relative_gradient_error(post, jittered(fixture, rng, 0.1)));
    INFO("horizon " << horizon << " worst relative error " << worst);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("log posterior is the sum of its public pieces", "[model]") {
  const PriorSpec spec;
  const auto obs = make_observations(40, 9);
  const SirPosterior post(obs, spec);
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    const auto x = unconstrain(random_parameters(rng, 40), spec, kPopulation);
    const auto c = constrain(x, spec, kPopulation);
    const auto traj = trajectory_of(c.params, kPopulation);
    double expect = log_prior(c.params, spec, kPopulation) + c.log_jacobian;
    expect += deaths_loglik(obs.death_series[0], expected_deaths(traj.nu, c.params.ifr, obs.delay));
    for (const auto& s : obs.surveys) expect += survey_loglik(traj, s);
    expect += testing_loglik(traj, obs.periods, c.params.phi, c.params.eta, kPopulation);
    CHECK(post.log_density(x) == Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("data terms reduce and add as expected", "[model]") {
  const PriorSpec spec;
  auto obs = make_observations(30, 2);
  std::mt19937_64 rng(3);
  const auto x = unconstrain(random_parameters(rng, 30), spec, kPopulation);
  const auto c = constrain(x, spec, kPopulation);

  ObservationSet empty = obs;
  empty.death_series.clear();
  empty.surveys.clear();
  empty.periods.clear();
  const double prior_only = SirPosterior(empty, spec).log_density(x);
  CHECK(prior_only == Approx(log_prior(c.params, spec, kPopulation) + log_jacobian(x, spec, kPopulation)).epsilon(1e-12));

  ObservationSet deaths_only = empty;
  deaths_only.death_series = obs.death_series;
  const double one = SirPosterior(deaths_only, spec).log_density(x) - prior_only;
  deaths_only.death_series.push_back(obs.death_series[0]);
  const double two = SirPosterior(deaths_only, spec).log_density(x) - prior_only;
  CHECK(two == Approx(2.0 * one).epsilon(1e-12));
}

TEST_CASE("log posterior support", "[model]") {
  const PriorSpec spec;
  const auto obs = make_observations(20, 5);
  const SirPosterior post(obs, spec);
  std::mt19937_64 rng(8);
  const auto x = unconstrain(random_parameters(rng, 20), spec, kPopulation);
  std::normal_distribution<double> jitter(0.0, 1e-3);
  for (int rep = 0; rep < 50; ++rep) {
    auto y = x;
    for (double& v : y) v += jitter(rng);
    CHECK(std::isfinite(post.log_density(y)));
  }

  // Non-finite input and impossible observations give -inf with a zero gradient.
  auto bad = x;
  bad[0] = std::numeric_limits<double>::infinity();
  std::vector<double> grad(x.size(), 1.0);
  CHECK(post.log_density(bad, grad) == kNegInf);
  for (double g : grad) CHECK(g == 0.0);

  ObservationSet impossible = obs;
  impossible.surveys.push_back({SurveyKind::viral, 0.01, 100.0, 0, 0});
  impossible.death_series[0][0] = 5.0;
  auto lowest = x;
  lowest[0] = -800.0;  // IFR underflows to exactly zero
  CHECK(SirPosterior(impossible, spec).log_density(lowest) == kNegInf);
}

TEST_CASE("observation set validation", "[model]") {
  auto obs = make_observations(14, 1);
  obs.death_series[0].pop_back();
  CHECK_THROWS(SirPosterior(obs, PriorSpec{}));
  PriorSpec bad;
  bad.susceptible_fraction = PriorDescriptor::uniform(0.9995, 1.0);
  CHECK_THROWS(SirPosterior(make_observations(14, 1), bad));
}

TEST_CASE("every walk coordinate choice round-trips and has an exact gradient", "[model][gradient]") {
  const PriorSpec spec;
  const auto fixture = make_fixture(60, 77);
  for (auto walk : {WalkParameterization::increments, WalkParameterization::cumulative, WalkParameterization::centered}) {
    INFO("walk " << to_string(walk));
    CHECK(walk_from_string(to_string(walk)) == walk);
    const auto x = unconstrain(fixture.truth, spec, kPopulation, walk);
    const auto back = constrain(x, spec, kPopulation, walk).params.flatten();
    const auto orig = fixture.truth.flatten();
    for (std::size_t k = 0; k < orig.size(); ++k) CHECK(std::abs(back[k] - orig[k]) <= 1e-10 * std::abs(orig[k]));

    const SirPosterior post(fixture.obs, spec, walk);
    std::mt19937_64 rng(5);
    double worst = 0.0;
    for (int point = 0; point < 5; ++point) {
      auto y = x;
      std::normal_distribution<double> z(0.0, 0.05);
      for (double& v : y) v += z(rng);
      worst = std::max(worst, max_relative_gradient_error(post, y));
    }
    CHECK(worst < 1e-5);
  }
}

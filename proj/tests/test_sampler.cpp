#include "sirbayes/chaining.hpp"
#include "sirbayes/diagnostics.hpp"
#include "sirbayes/model.hpp"
#include "sirbayes/sampler.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

using namespace sirbayes;
using Catch::Approx;

namespace {

struct StdNormal {
  std::size_t dim;
  std::size_t dimension() const { return dim; }
  double log_density(std::span<const double> x, std::span<double> g) const {
    double lp = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      lp -= 0.5 * x[i] * x[i];
      g[i] = -x[i];
    }
    return lp;
  }
};

struct Correlated2d {
  double rho;
  std::size_t dimension() const { return 2; }
  double log_density(std::span<const double> x, std::span<double> g) const {
    const double c = 1.0 / (1.0 - rho * rho);
    g[0] = -c * (x[0] - rho * x[1]);
    g[1] = -c * (x[1] - rho * x[0]);
    return -0.5 * c * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]);
  }
};

// Unnormalized exp(-h (x^2 - 1)^2): two modes at +-1 separated by a barrier of h nats.
struct DoubleWell {
  double h = 2.0;
  std::size_t dimension() const { return 1; }
  double density(double x) const { return std::exp(-h * (x * x - 1.0) * (x * x - 1.0)); }
  double log_density(std::span<const double> x, std::span<double> g) const {
    const double u = x[0] * x[0] - 1.0;
    g[0] = -4.0 * h * u * x[0];
    return -h * u * u;
  }
};

struct NeverFinite {
  std::size_t dimension() const { return 3; }
  double log_density(std::span<const double>, std::span<double> g) const {
    for (double& v : g) v = 0.0;
    return -std::numeric_limits<double>::infinity();
  }
};

// One named parameter with a prior entry and a normal likelihood for its mean.
struct ToyPhi {
  PriorDescriptor prior;
  double data_mean;
  double data_sd;
  std::size_t dimension() const { return 1; }
  std::vector<std::string> parameter_names() const { return {"phi"}; }
  std::vector<double> constrain(std::span<const double> x) const { return {to_interval(x[0], prior.lo, prior.hi).value}; }
  double log_density(std::span<const double> x, std::span<double> g) const {
    const BoundedValue b = to_interval(x[0], prior.lo, prior.hi);
    const double z = (b.value - data_mean) / data_sd;
    const double lp = prior.log_density(b.value) - 0.5 * z * z + b.log_jac;
    g[0] = (prior.dlog_density(b.value) - z / data_sd) * b.dvalue + b.dlog_jac;
    return lp;
  }
};

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

SamplerConfig config(std::uint64_t seed, std::size_t total = 2000, std::size_t warmup = 1000) {
  SamplerConfig cfg;
  cfg.seed = seed;
  cfg.total_steps = total;
  cfg.warmup_steps = warmup;
  return cfg;
}

}  // namespace

TEST_CASE("standard normal moments", "[sampler][oracle]") {
  const auto draws = sample(StdNormal{10}, config(11));
  REQUIRE(draws.size() == 4000);
  for (std::size_t j = 0; j < 10; ++j) {
    const auto col = draws.column(j);
    CHECK(std::abs(mean(col)) < 0.05);
    CHECK(std::abs(sd(col) - 1.0) < 0.05);
    CHECK(draws.r_hat[j] < 1.01);
  }
  CHECK(draws.divergences() == 0);
}

TEST_CASE("correlated normal recovers its correlation", "[sampler][oracle]") {
  for (MetricKind metric : {MetricKind::diag, MetricKind::dense}) {
    auto cfg = config(12);
    cfg.metric = metric;
    const auto draws = sample(Correlated2d{0.9}, cfg);
    const auto a = draws.column(0), b = draws.column(1);
    const double ma = mean(a), mb = mean(b);
    double cov = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) cov += (a[i] - ma) * (b[i] - mb);
    cov /= static_cast<double>(a.size() - 1);
    CHECK(std::abs(cov / (sd(a) * sd(b)) - 0.9) < 0.05);
  }
}

TEST_CASE("double well histogram matches the density", "[sampler][oracle]") {
  const DoubleWell target;
  auto cfg = config(13, 26000, 1000);
  const auto draws = sample(target, cfg);
  REQUIRE(draws.size() == 100000);

  constexpr int bins = 100;
  constexpr double lo = -2.5, hi = 2.5, width = (hi - lo) / bins;
  std::vector<double> exact(bins, 0.0);
  double z = 0.0;
  for (int b = 0; b < bins; ++b) {
    // Simpson's rule inside each bin.
    const double a = lo + b * width, m = a + 0.5 * width, e = a + width;
    exact[b] = width / 6.0 * (target.density(a) + 4.0 * target.density(m) + target.density(e));
    z += exact[b];
  }
  std::vector<double> hist(bins, 0.0);
  for (double x : draws.column(0)) {
    const int b = static_cast<int>(std::floor((x - lo) / width));
    if (b >= 0 && b < bins) hist[b] += 1.0;
  }
  double tv = 0.0;
  for (int b = 0; b < bins; ++b) tv += std::abs(hist[b] / static_cast<double>(draws.size()) - exact[b] / z);
  tv *= 0.5;
  INFO("total variation " << tv);
  CHECK(tv < 0.03);
}

TEST_CASE("leapfrog conserves energy on a quadratic target", "[sampler]") {
  const StdNormal target{5};
  Hamiltonian<StdNormal> ham(target, 5);
  PhasePoint z;
  z.q = {0.3, -1.2, 0.8, 2.0, -0.1};
  z.p = {1.0, 0.5, -0.7, 0.2, -1.4};
  ham.evaluate(z);
  const double h0 = ham.hamiltonian(z);
  double drift = 0.0;
  for (int s = 0; s < 100; ++s) {
    ham.leapfrog(z, 1e-3);
    drift = std::max(drift, std::abs(ham.hamiltonian(z) - h0));
  }
  CHECK(drift < 1e-6);
}

TEST_CASE("same seed gives bit-identical draws", "[sampler][determinism]") {
  auto cfg = config(99, 400, 200);
  cfg.threads = 1;
  const auto a = sample(Correlated2d{0.5}, cfg);
  cfg.threads = 4;
  const auto b = sample(Correlated2d{0.5}, cfg);
  CHECK(a.values == b.values);
  CHECK(a.divergent == b.divergent);
  cfg.seed = 100;
  const auto c = sample(Correlated2d{0.5}, cfg);
  CHECK(a.values != c.values);
  // Chains within one run are seeded independently.
  const auto first = a.by_chain(0);
  CHECK(first[0] != first[1]);
}

TEST_CASE("sampler configuration and initialization errors", "[sampler]") {
  SamplerConfig cfg;
  cfg.warmup_steps = cfg.total_steps;
  CHECK_THROWS_AS(sample(StdNormal{2}, cfg), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.target_accept = 0.4;
  CHECK_THROWS_AS(sample(StdNormal{2}, cfg), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.chains = 0;
  CHECK_THROWS_AS(sample(StdNormal{2}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(sample(NeverFinite{}, config(1, 20, 10)), SamplerError);
}

TEST_CASE("prior-only posterior reproduces the uniform IFR prior", "[sampler][model]") {
  ObservationSet obs;
  obs.population = 1e6;
  obs.horizon = 10;
  // Without data the centered walk is a funnel in sigma; the increments form
  // removes it.
  const SirPosterior post(obs, PriorSpec{}, WalkParameterization::increments);
  const auto draws = sample(post, config(7));
  REQUIRE(draws.size() == 4000);
  const double ks = ks_statistic(draws.column("ifr"), [](double x) { return std::clamp(x / 0.03, 0.0, 1.0); });
  // 95% KS critical value at the effective sample size of the correlated draws.
  const double ess = draws.ess[draws.index_of("ifr")];
  INFO("KS statistic " << ks << " ESS " << ess);
  CHECK(ks < 1.36 / std::sqrt(ess));
  for (std::size_t r = 0; r < draws.size(); ++r) CHECK(draws.at(r, draws.index_of("s1")) + draws.at(r, draws.index_of("i1")) <= 1e6);
}

TEST_CASE("split R-hat and bulk ESS oracles", "[diagnostics]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 1.0);
  ChainSet iid(4, std::vector<double>(1000));
  for (auto& c : iid)
    for (double& v : c) v = z(rng);
  const double rh = split_rhat(iid);
  CHECK(rh >= 0.99);
  CHECK(rh <= 1.01);
  const double ess = bulk_ess(iid);
  CHECK(std::abs(ess - 4000.0) / 4000.0 < 0.2);

  ChainSet stuck{std::vector<double>(200, 1.0), std::vector<double>(200, 2.0)};
  CHECK(split_rhat(stuck) > 1.1);

  ChainSet shifted = iid;
  for (double& v : shifted[0]) v += 3.0;
  CHECK(split_rhat(shifted) > 1.1);

  // A strongly autocorrelated AR(1) chain has far fewer effective draws.
  ChainSet ar(4, std::vector<double>(1000));
  for (auto& c : ar) {
    double x = 0.0;
    for (double& v : c) v = x = 0.95 * x + z(rng);
  }
  CHECK(bulk_ess(ar) < 400.0);

  CHECK(std::isnan(split_rhat(ChainSet{std::vector<double>(10, 1.0), std::vector<double>(10, 1.0)})));
  CHECK_THROWS(diagnostics({ChainSet{iid[0]}}));
  CHECK_THROWS(diagnostics({ChainSet{std::vector<double>(50, 0.0), std::vector<double>(50, 1.0)}}));
  const auto d = diagnostics({iid});
  CHECK(d[0].r_hat == Approx(rh));
}

TEST_CASE("goodness-of-fit helpers", "[diagnostics]") {
  CHECK(chi_square_uniform_pvalue({10, 10, 10, 10}) == Approx(1.0));
  // Statistic 10 on 1 degree of freedom; the chi-square(1) tail is erfc(sqrt(x / 2)).
  CHECK(chi_square_uniform_pvalue({30, 10}) == Approx(std::erfc(std::sqrt(5.0))).epsilon(1e-10));
  CHECK_THROWS(chi_square_uniform_pvalue({5}));
  CHECK(ks_statistic({0.5}, [](double x) { return x; }) == Approx(0.5));
  CHECK(ks_statistic({0.125, 0.375, 0.625, 0.875}, [](double x) { return x; }) == Approx(0.125));
}

TEST_CASE("posterior-to-prior chaining", "[chaining]") {
  PriorSpec spec;
  const double n = 1e6;

  SECTION("moments of synthetic normal draws") {
    PosteriorDraws draws;
    draws.names = {"ifr", "gamma"};
    draws.chains = 4;
    draws.per_chain = 1000;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> period(1.0 / 0.12, 0.01 / (0.12 * 0.12));
    std::normal_distribution<double> ifr(0.12, 0.01);
    for (std::size_t r = 0; r < draws.size(); ++r) {
      draws.values.push_back(ifr(rng));
      draws.values.push_back(1.0 / period(rng));
    }
    spec.ifr = PriorDescriptor::uniform(0.0, 0.5);
    const auto e = chain_posterior_to_prior(draws, "ifr", spec, n);
    CHECK(e.kind == PriorDescriptor::Kind::empirical);
    CHECK(e.mean == Approx(0.12).margin(0.005));
    CHECK(e.sd == Approx(0.01).margin(0.005));
    CHECK(e.lo == 0.0);
    CHECK(e.hi == 0.5);
    // gamma is chained on the infectious-period scale and keeps its support.
    const auto g = chain_posterior_to_prior(draws, "gamma", spec, n);
    CHECK(g.mean == Approx(1.0 / 0.12).epsilon(0.01));
    CHECK(g.lo == 5.5);
    CHECK(g.hi == 11.5);
  }

  SECTION("degenerate and short inputs") {
    PosteriorDraws draws;
    draws.names = {"phi"};
    draws.chains = 2;
    draws.per_chain = 500;
    draws.values.assign(1000, 3.0);
    const auto e = chain_posterior_to_prior(draws, "phi", spec, n);
    CHECK(e.sd == kChainingSdFloor);
    CHECK(e.mean == 3.0);
    draws.per_chain = 499;
    draws.values.resize(998);
    CHECK_THROWS(chain_posterior_to_prior(draws, "phi", spec, n));
  }

  SECTION("unconverged draws are refused") {
    PosteriorDraws draws;
    draws.names = {"phi"};
    draws.chains = 2;
    draws.per_chain = 600;
    for (std::size_t r = 0; r < 1200; ++r) draws.values.push_back(r < 600 ? 1.0 + 1e-3 * r : 5.0 + 1e-3 * r);
    draws.update_diagnostics();
    CHECK_THROWS(chain_posterior_to_prior(draws, "phi", spec, n));
  }

  SECTION("chaining twice on the same data tightens the prior") {
    ToyPhi toy{spec.phi, 2.0, 0.5};
    const auto first = sample(toy, config(31));
    const auto stage1 = chain_posterior_to_prior(first, "phi", spec, n);
    toy.prior = stage1;
    const auto second = sample(toy, config(32));
    PriorSpec next = spec;
    next.phi = stage1;
    const auto stage2 = chain_posterior_to_prior(second, "phi", next, n);
    CHECK(stage2.sd <= stage1.sd);
    CHECK(stage2.sd == Approx(stage1.sd / std::sqrt(2.0)).epsilon(0.1));
  }
}

#pragma once

// Self-checks shared by the command-line validate command and the acceptance
// suite: oracle equivalences, sampler oracles, synthetic recovery and
// simulation-based calibration.

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirbayes/diagnostics.hpp"
#include "sirbayes/model.hpp"
#include "sirbayes/sampler.hpp"
#include "sirbayes/synth.hpp"

namespace sirbayes {

struct CheckResult {
  std::string group;  // e.g. "property", "sampler", "recovery", "sbc"
  std::string name;
  bool passed = false;
  bool skipped = false;
  std::string detail;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const CheckResult& r) {
  return {{"group", r.group}, {"name", r.name}, {"passed", r.passed}, {"skipped", r.skipped}, {"detail", r.detail},
          {"seconds", r.seconds}};
}

namespace detail {

template <class F>
CheckResult timed(const std::string& group, const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{group, name};
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

// Posterior whose gradient is deliberately wrong in one coordinate; used as
// the negative control for the gradient check.
struct GradientBug {
  const SirPosterior& inner;
  std::size_t dimension() const { return inner.dimension(); }
  double log_density(std::span<const double> x, std::span<double> g) const {
    const double lp = inner.log_density(x, g);
    g[0] *= 1.001;
    return lp;
  }
  double log_density(std::span<const double> x) const {
    std::vector<double> g(x.size());
    return log_density(x, g);
  }
};

template <class Target>
double max_gradient_error(const Target& target, const std::vector<double>& x) {
  std::vector<double> grad(x.size());
  target.log_density(x, grad);
  const double h = 1e-5;
  std::vector<double> xp = x, xm = x;
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    const double fd = (target.log_density(xp) - target.log_density(xm)) / (2.0 * h);
    xp[k] = xm[k] = x[k];
    worst = std::max(worst, std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1.0}));
  }
  return worst;
}

struct StdNormalTarget {
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

struct CorrelatedTarget {
  double rho;
  std::size_t dimension() const { return 2; }
  double log_density(std::span<const double> x, std::span<double> g) const {
    const double c = 1.0 / (1.0 - rho * rho);
    g[0] = -c * (x[0] - rho * x[1]);
    g[1] = -c * (x[1] - rho * x[0]);
    return -0.5 * c * (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]);
  }
};

struct DoubleWellTarget {
  double h = 2.0;
  std::size_t dimension() const { return 1; }
  double density(double x) const { return std::exp(-h * (x * x - 1.0) * (x * x - 1.0)); }
  double log_density(std::span<const double> x, std::span<double> g) const {
    const double u = x[0] * x[0] - 1.0;
    g[0] = -4.0 * h * u * x[0];
    return -h * u * u;
  }
};

inline SamplerConfig oracle_config(std::uint64_t seed, std::size_t total = 2000, std::size_t warmup = 1000) {
  SamplerConfig cfg;
  cfg.seed = seed;
  cfg.total_steps = total;
  cfg.warmup_steps = warmup;
  return cfg;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Property suite.

inline std::vector<CheckResult> property_checks(bool inject_gradient_bug = false) {
  std::vector<CheckResult> out;
  out.push_back(detail::timed("property", "SIR conservation to 1e-9 N", [](CheckResult& r) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
      const double n = std::pow(10.0, 3.0 + 5.0 * u(rng));
      const SirState init{n * (1 - 2e-3), n * 1e-3, n * 1e-3};
      std::vector<double> beta(1 + rep % 150);
      for (double& b : beta) b = 0.6 * u(rng);
      const auto traj = simulate(init, ContactPath{beta, 0.0}, 1.0 / (5.5 + 6.0 * u(rng)), n, beta.size());
      for (const auto& s : traj.states) worst = std::max(worst, std::abs(s.total() - n) / n);
    }
    r.passed = worst <= 1e-9;
    r.detail = "worst relative drift " + detail::fmt(worst);
  }));
  out.push_back(detail::timed("property", "effective-beta round trip to 1e-9", [](CheckResult& r) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
      const double n = 1e6;
      std::vector<double> beta(1 + rep % 150);
      for (double& b : beta) b = 0.05 + 0.5 * u(rng);
      const auto traj = simulate({n - 100, 100, 0}, ContactPath{beta, 0.0}, 1.0 / 8.5, n, beta.size());
      const auto back = effective_beta(traj);
      for (std::size_t t = 0; t < beta.size(); ++t)
        if (!is_undefined(back[t])) worst = std::max(worst, std::abs(back[t] - beta[t]) / beta[t]);
    }
    r.passed = worst <= 1e-9;
    r.detail = "worst relative error " + detail::fmt(worst);
  }));
  out.push_back(detail::timed("property", "delay convolution equals brute force to 1e-12", [](CheckResult& r) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto delay = default_delay();
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> nu(1 + rep % 60);
      for (double& v : nu) v = 1e4 * u(rng);
      const double ifr = 0.03 * u(rng);
      const auto fast = expected_deaths(nu, ifr, delay);
      for (std::size_t t = 0; t < nu.size(); ++t) {
        double slow = 0.0;
        for (std::size_t s = 0; s <= t; ++s)
          if (t - s < delay.pmf.size()) slow += ifr * nu[s] * delay.pmf[t - s];
        worst = std::max(worst, std::abs(fast[t] - slow) / std::max(std::abs(slow), 1e-300));
      }
    }
    r.passed = worst <= 1e-12;
    r.detail = "worst relative error " + detail::fmt(worst);
  }));
  out.push_back(detail::timed("property", "delay pmf truncation m=40 at cut 0.99", [](CheckResult& r) {
    const auto d = build_delay_pmf(21.0, 1.1, 0.99);
    const auto fixed = default_delay();
    r.passed = d.m() == 40;
    r.detail = "quantile rule gives m=" + std::to_string(d.m()) + "; model default horizon m=" + std::to_string(fixed.m());
  }));
  out.push_back(detail::timed("property", std::string("gradient vs central differences < 1e-5") +
                                              (inject_gradient_bug ? " (injected bug)" : ""),
                              [inject_gradient_bug](CheckResult& r) {
                                double worst = 0.0;
                                for (std::size_t horizon : {10u, 60u, 120u}) {
                                  const GroundTruth g = desk_truth(horizon);
                                  const SirPosterior post(to_observations(generate(g, 100 + horizon)), PriorSpec{});
                                  const detail::GradientBug bug{post};
                                  std::mt19937_64 rng(4242 + horizon);
                                  std::normal_distribution<double> z(0.0, 0.1);
                                  const auto centre = unconstrain(g.params, PriorSpec{}, g.population);
                                  for (int point = 0; point < 20; ++point) {
                                    auto x = centre;
                                    for (double& v : x) v += z(rng);
                                    worst = std::max(worst, inject_gradient_bug ? detail::max_gradient_error(bug, x)
                                                                                : detail::max_gradient_error(post, x));
                                  }
                                }
                                r.passed = worst < 1e-5;
                                r.detail = "worst relative error " + detail::fmt(worst) + " over T in {10, 60, 120}";
                              }));
  out.push_back(detail::timed("property", "transform round trips to 1e-10", [](CheckResult& r) {
    std::mt19937_64 rng(5);
    const PriorSpec spec;
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      const GroundTruth g = sample_truth(calibration_prior(), desk_truth(1 + rep % 90), rng);
      const auto x = unconstrain(g.params, spec, g.population);
      const auto back = constrain(x, spec, g.population).params.flatten();
      const auto orig = g.params.flatten();
      for (std::size_t k = 0; k < orig.size(); ++k)
        worst = std::max(worst, std::abs(back[k] - orig[k]) / std::max(std::abs(orig[k]), 1e-300));
    }
    r.passed = worst <= 1e-10;
    r.detail = "worst relative error " + detail::fmt(worst);
  }));
  return out;
}

// ---------------------------------------------------------------------------
// Sampler oracles.

inline std::vector<CheckResult> sampler_checks() {
  std::vector<CheckResult> out;
  out.push_back(detail::timed("sampler", "10-d standard normal moments within 0.05", [](CheckResult& r) {
    const auto d = sample(detail::StdNormalTarget{10}, detail::oracle_config(11));
    double worst = 0.0;
    for (std::size_t j = 0; j < 10; ++j) {
      const auto c = d.column(j);
      worst = std::max({worst, std::abs(detail::mean_of(c)), std::abs(std::sqrt(detail::variance_of(c)) - 1.0)});
    }
    r.passed = worst < 0.05;
    r.detail = "worst mean or sd error " + detail::fmt(worst);
  }));
  out.push_back(detail::timed("sampler", "rho=0.9 correlation within 0.05", [](CheckResult& r) {
    const auto d = sample(detail::CorrelatedTarget{0.9}, detail::oracle_config(12));
    const auto a = d.column(0), b = d.column(1);
    const double ma = detail::mean_of(a), mb = detail::mean_of(b);
    double cov = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) cov += (a[i] - ma) * (b[i] - mb);
    cov /= static_cast<double>(a.size() - 1);
    const double rho = cov / std::sqrt(detail::variance_of(a) * detail::variance_of(b));
    r.passed = std::abs(rho - 0.9) < 0.05;
    r.detail = "estimated correlation " + detail::fmt(rho);
  }));
  out.push_back(detail::timed("sampler", "double-well total variation < 3%", [](CheckResult& r) {
    const detail::DoubleWellTarget target;
    const auto d = sample(target, detail::oracle_config(13, 26000, 1000));
    constexpr int bins = 100;
    constexpr double lo = -2.5, hi = 2.5, width = (hi - lo) / bins;
    std::vector<double> exact(bins), hist(bins, 0.0);
    double z = 0.0;
    for (int b = 0; b < bins; ++b) {
      const double a = lo + b * width;
      exact[b] = width / 6.0 * (target.density(a) + 4.0 * target.density(a + 0.5 * width) + target.density(a + width));
      z += exact[b];
    }
    for (double x : d.column(0)) {
      const int b = static_cast<int>(std::floor((x - lo) / width));
      if (b >= 0 && b < bins) hist[b] += 1.0;
    }
    double tv = 0.0;
    for (int b = 0; b < bins; ++b) tv += std::abs(hist[b] / static_cast<double>(d.size()) - exact[b] / z);
    tv *= 0.5;
    r.passed = tv < 0.03;
    r.detail = "total variation " + detail::fmt(tv) + " from " + std::to_string(d.size()) + " draws";
  }));
  out.push_back(detail::timed("sampler", "same-seed bit reproducibility", [](CheckResult& r) {
    auto cfg = detail::oracle_config(14, 600, 300);
    cfg.threads = 1;
    const auto a = sample(detail::CorrelatedTarget{0.5}, cfg);
    cfg.threads = 4;
    const auto b = sample(detail::CorrelatedTarget{0.5}, cfg);
    r.passed = a.values == b.values;
    r.detail = r.passed ? "identical draws across thread counts" : "draws differ";
  }));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic recovery on the desk fixture.

inline std::vector<CheckResult> recovery_checks(const SamplerConfig& cfg, std::uint64_t data_seed = 42) {
  const GroundTruth truth = desk_truth();
  PosteriorDraws draws;
  double fit_seconds = 0.0;
  std::string error;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    const SirPosterior post(to_observations(generate(truth, data_seed)), PriorSpec{});
    draws = sample(post, cfg);
    fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } catch (const std::exception& e) {
    error = e.what();
  }
  std::vector<CheckResult> out;
  auto add = [&](const std::string& name, auto&& body) {
    CheckResult r{"recovery", name};
    r.seconds = out.empty() ? fit_seconds : 0.0;  // the shared fit is timed once
    if (!error.empty()) {
      r.detail = "fit failed: " + error;
    } else {
      body(r);
    }
    out.push_back(r);
  };
  add("true IFR inside the 95% interval", [&](CheckResult& r) {
    auto ifr = draws.column("ifr");
    std::sort(ifr.begin(), ifr.end());
    const double lo = quantile_sorted(ifr, 0.025), hi = quantile_sorted(ifr, 0.975);
    r.passed = lo <= truth.params.ifr && truth.params.ifr <= hi;
    r.detail = "interval [" + detail::fmt(lo) + ", " + detail::fmt(hi) + "], truth " + detail::fmt(truth.params.ifr);
  });
  add("all R-hat < 1.05", [&](CheckResult& r) {
    r.passed = draws.max_r_hat() < 1.05;
    std::size_t worst = 0;
    for (std::size_t j = 0; j < draws.r_hat.size(); ++j)
      if (!std::isnan(draws.r_hat[j]) && draws.r_hat[j] > draws.r_hat[worst]) worst = j;
    r.detail = "max R-hat " + detail::fmt(draws.max_r_hat()) + " (" + draws.names[worst] + ")";
  });
  add("divergence rate < 2%", [&](CheckResult& r) {
    r.passed = draws.divergence_rate() < 0.02;
    r.detail = std::to_string(draws.divergences()) + " of " + std::to_string(draws.size()) + " transitions";
  });
  return out;
}

// ---------------------------------------------------------------------------
// Simulation-based calibration.

struct SbcCheckOptions {
  std::size_t replications = 50;
  std::size_t negative_control_replications = 20;
  double negative_control_factor = 2.0;
  double p_threshold = 0.01;
  double coverage_tolerance = 0.07;
  std::function<void(const std::string&, std::size_t, double)> progress;  // (run, replication, seconds)
};

inline std::vector<CheckResult> sbc_checks(const SamplerConfig& cfg, const SbcCheckOptions& o = {}) {
  if (o.replications < 20) throw std::invalid_argument("simulation-based calibration needs at least 20 replications");
  std::vector<CheckResult> out;
  SbcOptions opt;
  if (o.progress) opt.progress = [&](std::size_t r, double s) { o.progress("calibration", r, s); };
  SbcResult res;
  double secs = 0.0;
  std::string error;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    res = sbc_run(calibration_prior(), o.replications, cfg, opt);
    secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } catch (const std::exception& e) {
    error = e.what();
  }
  const std::string kept = error.empty() ? std::to_string(o.replications - res.excluded.size()) + " of " +
                                               std::to_string(o.replications) + " replications kept"
                                         : "";
  for (const char* name : {"ifr", "gamma"}) {
    CheckResult r{"sbc", std::string(name) + " rank uniformity not rejected at p=0.01"};
    r.seconds = out.empty() ? secs : 0.0;
    if (!error.empty()) {
      r.detail = "run failed: " + error;
    } else {
      const auto& p = res.parameter(name);
      r.passed = p.chi_square_p > o.p_threshold;
      r.detail = "chi-square p=" + detail::fmt(p.chi_square_p) + ", " + kept;
    }
    out.push_back(r);
  }
  {
    CheckResult r{"sbc", "IFR 95% coverage within 95% +- 7 points"};
    if (!error.empty()) {
      r.detail = "run failed: " + error;
    } else {
      const double c = res.parameter("ifr").coverage;
      r.passed = std::abs(c - 0.95) <= o.coverage_tolerance;
      r.detail = "coverage " + detail::fmt(c) + ", " + kept;
    }
    out.push_back(r);
  }
  if (o.negative_control_replications > 0) {
    out.push_back(detail::timed("sbc", "negative control (IFR doubled in generation) fails uniformity", [&](CheckResult& r) {
      SbcOptions bad;
      bad.parameters = {"ifr"};
      bad.ifr_generation_factor = o.negative_control_factor;
      if (o.progress) bad.progress = [&](std::size_t k, double s) { o.progress("negative control", k, s); };
      SamplerConfig ncfg = cfg;
      ncfg.seed = cfg.seed + 7919;
      const auto nres = sbc_run(calibration_prior(), o.negative_control_replications, ncfg, bad);
      const double p = nres.parameter("ifr").chi_square_p;
      r.passed = p <= o.p_threshold;
      r.detail = "chi-square p=" + detail::fmt(p) + " over " +
                 std::to_string(o.negative_control_replications - nres.excluded.size()) + " kept replications";
    }));
  }
  return out;
}

}  // namespace sirbayes

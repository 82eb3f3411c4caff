#pragma once

// Parameter space, priors and the log-posterior of the SIR observation model.
//
// Unconstrained layout (dimension T + 7):
//   [0]          ifr            logit-affine onto its prior support
//   [1]          beta_1         logit-affine onto its prior support
//   [2 .. T]     walk coordinates (see below)
//   [T + 1]      sigma          logit-affine
//   [T + 2]      1 / gamma      logit-affine (prior is on the infectious period)
//   [T + 3]      I_1 / N        logit-affine
//   [T + 4]      S_1 / N        logit-affine onto (lo, min(hi, 1 - I_1 / N))
//   [T + 5]      phi            logit-affine
//   [T + 6]      eta            logit-affine
//
// The contact rate follows a latent walk w_1 = softplus_k^{-1}(beta_1),
// w_t ~ N(w_{t-1}, sigma^2), with beta_t = softplus_k(w_t) keeping beta >= 0.
// Three coordinate choices for walk entries t >= 2:
//   increments   z_t = (w_t - w_{t-1}) / sigma
//   cumulative   v_t = (w_t - w_1) / sigma, the running sum of the increments
//   centered     w_t itself

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sirbayes/dynamics.hpp"
#include "sirbayes/observation.hpp"
#include "sirbayes/priors.hpp"

namespace sirbayes {

// Sharpness of the soft floor at zero on the contact rate (1/day scale).
inline constexpr double kContactFloorSharpness = 100.0;

// Past k * w = 40 the correction exp(-k w) / k is below double resolution.
inline double contact_floor(double w) {
  const double kw = kContactFloorSharpness * w;
  return kw > 40.0 ? w : softplus(kw) / kContactFloorSharpness;
}
inline double contact_floor_slope(double w) {
  const double kw = kContactFloorSharpness * w;
  return kw > 40.0 ? 1.0 : logistic(kw);
}
inline double contact_floor_inverse(double beta) {
  return beta + std::log(-std::expm1(-kContactFloorSharpness * beta)) / kContactFloorSharpness;
}
inline double contact_floor_inverse_slope(double beta) { return 1.0 / -std::expm1(-kContactFloorSharpness * beta); }

struct ParameterVector {
  double ifr = 0.0;
  std::vector<double> beta;
  double sigma = 0.0;
  double gamma = 0.0;
  double s1 = 0.0;  // people
  double i1 = 0.0;  // people
  double phi = 0.0;
  double eta = 0.0;

  std::size_t horizon() const noexcept { return beta.size(); }

  // ifr, beta_1..beta_T, sigma, gamma, s1, i1, phi, eta
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(beta.size() + 7);
    out.push_back(ifr);
    out.insert(out.end(), beta.begin(), beta.end());
    out.insert(out.end(), {sigma, gamma, s1, i1, phi, eta});
    return out;
  }

  static ParameterVector unflatten(std::span<const double> flat) {
    if (flat.size() < 8) throw std::invalid_argument("flat parameter vector too short");
    const std::size_t t = flat.size() - 7;
    ParameterVector p;
    p.ifr = flat[0];
    p.beta.assign(flat.begin() + 1, flat.begin() + 1 + static_cast<std::ptrdiff_t>(t));
    p.sigma = flat[t + 1];
    p.gamma = flat[t + 2];
    p.s1 = flat[t + 3];
    p.i1 = flat[t + 4];
    p.phi = flat[t + 5];
    p.eta = flat[t + 6];
    return p;
  }

  SirState initial_state(double n) const { return {s1, i1, n - s1 - i1}; }
};

inline std::vector<std::string> parameter_names(std::size_t horizon) {
  std::vector<std::string> names{"ifr"};
  for (std::size_t t = 1; t <= horizon; ++t) names.push_back("beta_" + std::to_string(t));
  for (const char* s : {"sigma", "gamma", "s1", "i1", "phi", "eta"}) names.emplace_back(s);
  return names;
}

// Column of a named scalar parameter in the flattened layout.
inline std::size_t parameter_index(const std::string& name, std::size_t horizon) {
  if (name == "ifr") return 0;
  if (name.rfind("beta_", 0) == 0) {
    const std::size_t t = std::stoul(name.substr(5));
    if (t < 1 || t > horizon) throw std::invalid_argument("no parameter named " + name);
    return t;
  }
  const char* tail[] = {"sigma", "gamma", "s1", "i1", "phi", "eta"};
  for (std::size_t k = 0; k < 6; ++k)
    if (name == tail[k]) return horizon + 1 + k;
  throw std::invalid_argument("no parameter named " + name);
}

inline SirTrajectory trajectory_of(const ParameterVector& p, double n) {
  return simulate(p.initial_state(n), ContactPath{p.beta, p.sigma}, p.gamma, n, p.horizon());
}

// One descriptor per scalar parameter. susceptible_fraction and
// infectious_fraction are S_1 / N and I_1 / N; infectious_period is 1 / gamma.
struct PriorSpec {
  PriorDescriptor ifr = PriorDescriptor::uniform(0.0, 0.03);
  PriorDescriptor beta1 = PriorDescriptor::uniform(0.0, 2.0);
  PriorDescriptor sigma = PriorDescriptor::uniform(0.0, 0.3);
  PriorDescriptor infectious_period = PriorDescriptor::truncated_normal(8.5, 1.5, 5.5, 11.5);
  PriorDescriptor susceptible_fraction = PriorDescriptor::uniform(0.9, 1.0);
  PriorDescriptor infectious_fraction = PriorDescriptor::uniform(0.0, 0.001);
  PriorDescriptor phi = PriorDescriptor::uniform(0.0, 20.0);
  PriorDescriptor eta = PriorDescriptor::uniform(0.0, 5.0e4);

  void validate() const {
    ifr.validate("ifr");
    beta1.validate("beta1");
    sigma.validate("sigma");
    infectious_period.validate("infectious_period");
    susceptible_fraction.validate("susceptible_fraction");
    infectious_fraction.validate("infectious_fraction");
    phi.validate("phi");
    eta.validate("eta");
    if (ifr.lo < 0.0 || ifr.hi > 1.0) throw std::invalid_argument("ifr support must lie in [0, 1]");
    if (beta1.lo < 0.0 || sigma.lo < 0.0 || phi.lo < 0.0 || eta.lo < 0.0)
      throw std::invalid_argument("beta1, sigma, phi and eta supports must be non-negative");
    if (infectious_period.lo < 1.0) throw std::invalid_argument("infectious period must be at least one day");
    if (infectious_fraction.lo < 0.0 || susceptible_fraction.lo < 0.0)
      throw std::invalid_argument("initial fractions must be non-negative");
    if (!(susceptible_fraction.lo + infectious_fraction.hi < 1.0))
      throw std::invalid_argument("initial-state supports leave no room for S_1 + I_1 <= N");
  }

  // Prior descriptor addressed by parameter name, as used for chaining.
  PriorDescriptor& entry(const std::string& name) {
    if (name == "ifr") return ifr;
    if (name == "beta1" || name == "beta_1") return beta1;
    if (name == "sigma") return sigma;
    if (name == "gamma" || name == "infectious_period") return infectious_period;
    if (name == "s1" || name == "susceptible_fraction") return susceptible_fraction;
    if (name == "i1" || name == "infectious_fraction") return infectious_fraction;
    if (name == "phi") return phi;
    if (name == "eta") return eta;
    throw std::invalid_argument("no prior entry named " + name);
  }
  const PriorDescriptor& entry(const std::string& name) const { return const_cast<PriorSpec*>(this)->entry(name); }
};

// The prior-scale value of a parameter: gamma is described by 1/gamma, and
// the initial compartments by their population fractions.
inline double prior_scale_value(const std::string& name, double value, double n) {
  if (name == "gamma") return 1.0 / value;
  if (name == "s1" || name == "i1") return value / n;
  return value;
}

// Density over (ifr, beta_1, latent walk w_2..w_T, sigma, 1/gamma, S_1/N,
// I_1/N, phi, eta). The random-walk terms act on the latent walk, which for
// beta well above zero coincides with beta to within exp(-k * beta) / k.
inline double log_prior(const ParameterVector& p, const PriorSpec& spec, double n) {
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  if (p.beta.empty()) throw std::invalid_argument("parameter vector has an empty contact path");
  double lp = spec.ifr.log_density(p.ifr) + spec.beta1.log_density(p.beta[0]) + spec.sigma.log_density(p.sigma) +
              spec.susceptible_fraction.log_density(p.s1 / n) + spec.infectious_fraction.log_density(p.i1 / n) +
              spec.phi.log_density(p.phi) + spec.eta.log_density(p.eta);
  if (!(p.gamma > 0.0)) return ninf;
  lp += spec.infectious_period.log_density(1.0 / p.gamma);
  if (p.s1 + p.i1 > n) return ninf;
  if (!std::isfinite(lp) || !(p.sigma > 0.0)) return ninf;
  double prev = contact_floor_inverse(p.beta[0]);
  for (std::size_t t = 1; t < p.beta.size(); ++t) {
    if (!(p.beta[t] > 0.0)) return ninf;
    const double w = contact_floor_inverse(p.beta[t]);
    lp += normal_logpdf(w, prev, p.sigma * p.sigma);
    prev = w;
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Coordinate transforms.

struct Constrained {
  ParameterVector params;
  double log_jacobian = 0.0;
};

inline std::size_t unconstrained_dimension(std::size_t horizon) { return horizon + 7; }

enum class WalkParameterization { increments, cumulative, centered };

inline const char* to_string(WalkParameterization w) {
  switch (w) {
    case WalkParameterization::increments: return "increments";
    case WalkParameterization::cumulative: return "cumulative";
    case WalkParameterization::centered: return "centered";
  }
  return "?";
}

inline WalkParameterization walk_from_string(const std::string& s) {
  if (s == "increments") return WalkParameterization::increments;
  if (s == "cumulative") return WalkParameterization::cumulative;
  if (s == "centered") return WalkParameterization::centered;
  throw std::invalid_argument("unknown walk parameterization: " + s);
}

inline constexpr WalkParameterization kDefaultWalk = WalkParameterization::centered;

namespace detail {

// Latent walk value at t >= 1 from its coordinate, given w_{t-1} and w_1.
inline double walk_value(WalkParameterization walk, double coord, double prev, double first, double sigma) {
  switch (walk) {
    case WalkParameterization::increments: return prev + sigma * coord;
    case WalkParameterization::cumulative: return first + sigma * coord;
    case WalkParameterization::centered: return coord;
  }
  return coord;
}

inline double walk_coordinate(WalkParameterization walk, double w, double prev, double first, double sigma) {
  switch (walk) {
    case WalkParameterization::increments: return (w - prev) / sigma;
    case WalkParameterization::cumulative: return (w - first) / sigma;
    case WalkParameterization::centered: return w;
  }
  return w;
}

}  // namespace detail

namespace detail {

struct InitialFractions {
  BoundedValue infectious;
  BoundedValue susceptible;
  double upper = 0.0;            // upper end of the susceptible interval
  bool upper_tracks_i1 = false;  // upper == 1 - I_1/N
};

inline InitialFractions initial_fractions(double u_i, double u_s, const PriorSpec& spec) {
  InitialFractions f;
  f.infectious = to_interval(u_i, spec.infectious_fraction.lo, spec.infectious_fraction.hi);
  const double cap = 1.0 - f.infectious.value;
  f.upper_tracks_i1 = cap < spec.susceptible_fraction.hi;
  f.upper = f.upper_tracks_i1 ? cap : spec.susceptible_fraction.hi;
  f.susceptible = to_interval(u_s, spec.susceptible_fraction.lo, f.upper);
  return f;
}

}  // namespace detail

inline Constrained constrain(std::span<const double> x, const PriorSpec& spec, double n,
                             WalkParameterization walk = kDefaultWalk) {
  if (x.size() < 8) throw std::invalid_argument("unconstrained vector too short");
  const std::size_t t_len = x.size() - 7;
  Constrained out;
  ParameterVector& p = out.params;
  double lj = 0.0;
  const auto ifr = to_interval(x[0], spec.ifr.lo, spec.ifr.hi);
  const auto b1 = to_interval(x[1], spec.beta1.lo, spec.beta1.hi);
  const auto sig = to_interval(x[t_len + 1], spec.sigma.lo, spec.sigma.hi);
  const auto per = to_interval(x[t_len + 2], spec.infectious_period.lo, spec.infectious_period.hi);
  const auto fr = detail::initial_fractions(x[t_len + 3], x[t_len + 4], spec);
  const auto phi = to_interval(x[t_len + 5], spec.phi.lo, spec.phi.hi);
  const auto eta = to_interval(x[t_len + 6], spec.eta.lo, spec.eta.hi);
  p.ifr = ifr.value;
  p.sigma = sig.value;
  p.gamma = 1.0 / per.value;
  p.i1 = fr.infectious.value * n;
  p.s1 = fr.susceptible.value * n;
  p.phi = phi.value;
  p.eta = eta.value;
  lj += ifr.log_jac + b1.log_jac + sig.log_jac + per.log_jac + fr.infectious.log_jac + fr.susceptible.log_jac +
        phi.log_jac + eta.log_jac;
  p.beta.resize(t_len);
  p.beta[0] = b1.value;
  const double first = contact_floor_inverse(b1.value);
  double w = first;
  for (std::size_t t = 1; t < t_len; ++t) {
    w = detail::walk_value(walk, x[1 + t], w, first, p.sigma);
    p.beta[t] = contact_floor(w);
  }
  if (walk != WalkParameterization::centered) lj += static_cast<double>(t_len - 1) * std::log(p.sigma);
  out.log_jacobian = lj;
  return out;
}

inline double log_jacobian(std::span<const double> x, const PriorSpec& spec, double n,
                           WalkParameterization walk = kDefaultWalk) {
  return constrain(x, spec, n, walk).log_jacobian;
}

inline std::vector<double> unconstrain(const ParameterVector& p, const PriorSpec& spec, double n,
                                       WalkParameterization walk = kDefaultWalk) {
  const std::size_t t_len = p.horizon();
  if (t_len == 0) throw std::invalid_argument("parameter vector has an empty contact path");
  std::vector<double> x(unconstrained_dimension(t_len));
  x[0] = from_interval(p.ifr, spec.ifr.lo, spec.ifr.hi);
  x[1] = from_interval(p.beta[0], spec.beta1.lo, spec.beta1.hi);
  const double first = contact_floor_inverse(p.beta[0]);
  double prev = first;
  for (std::size_t t = 1; t < t_len; ++t) {
    const double w = contact_floor_inverse(p.beta[t]);
    x[1 + t] = detail::walk_coordinate(walk, w, prev, first, p.sigma);
    prev = w;
  }
  x[t_len + 1] = from_interval(p.sigma, spec.sigma.lo, spec.sigma.hi);
  x[t_len + 2] = from_interval(1.0 / p.gamma, spec.infectious_period.lo, spec.infectious_period.hi);
  const double i_frac = p.i1 / n;
  const double s_frac = p.s1 / n;
  x[t_len + 3] = from_interval(i_frac, spec.infectious_fraction.lo, spec.infectious_fraction.hi);
  const double upper = std::min(spec.susceptible_fraction.hi, 1.0 - i_frac);
  x[t_len + 4] = from_interval(s_frac, spec.susceptible_fraction.lo, upper);
  x[t_len + 5] = from_interval(p.phi, spec.phi.lo, spec.phi.hi);
  x[t_len + 6] = from_interval(p.eta, spec.eta.lo, spec.eta.hi);
  return x;
}

// ---------------------------------------------------------------------------
// Observations seen by the model.

struct ObservationSet {
  double population = 0.0;
  std::size_t horizon = 0;
  // Each series contributes an independent Poisson term; normally one.
  std::vector<std::vector<double>> death_series;
  std::vector<SurveyObservation> surveys;
  std::vector<TestPeriod> periods;
  DelayDistribution delay = default_delay();

  void validate() const {
    if (!(population > 0.0)) throw std::invalid_argument("population must be positive");
    if (horizon == 0) throw std::invalid_argument("model horizon must be at least one day");
    for (const auto& d : death_series)
      if (d.size() != horizon) throw std::invalid_argument("death series length differs from horizon");
    for (const auto& s : surveys) s.validate(horizon);
    for (const auto& p : periods) {
      if (p.end_day >= horizon || p.start_day > p.end_day) throw std::invalid_argument("test period outside horizon");
      if (p.cases < 0.0 || p.tests < 0.0) throw std::invalid_argument("test period with negative counts");
    }
  }
};

// Log posterior on the unconstrained scale, with an exact reverse-mode
// gradient through the SIR recursion, the death convolution and every
// likelihood term. Pure and reentrant.
class SirPosterior {
public:
  SirPosterior(ObservationSet obs, PriorSpec spec, WalkParameterization walk = kDefaultWalk)
      : obs_(std::move(obs)), spec_(std::move(spec)), walk_(walk) {
    obs_.validate();
    spec_.validate();
    for (const auto& deaths : obs_.death_series)
      for (double dcount : deaths) death_log_factorials_ += std::lgamma(dcount + 1.0);
    build_trend_basis();
  }

  std::size_t dimension() const noexcept { return unconstrained_dimension(obs_.horizon); }
  const ObservationSet& observations() const noexcept { return obs_; }
  const PriorSpec& prior() const noexcept { return spec_; }
  WalkParameterization walk() const noexcept { return walk_; }

  std::vector<std::string> parameter_names() const { return sirbayes::parameter_names(obs_.horizon); }

  std::vector<double> constrain(std::span<const double> x) const {
    return sirbayes::constrain(x, spec_, obs_.population, walk_).params.flatten();
  }

  // Scalars drawn from their priors with a flat contact path; the best of a
  // few candidates by log density is returned, which keeps chains away from
  // the degenerate corners a single prior draw can land in.
  template <class Rng>
  std::vector<double> initial_point(Rng& rng) const {
    std::vector<double> best;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < kInitCandidates; ++k) {
      auto x = prior_point(rng);
      const double lp = log_density(x);
      if (best.empty() || lp > best_lp) {
        best = std::move(x);
        best_lp = lp;
      }
    }
    if (std::isfinite(best_lp)) ascend(best, ascent_steps_);
    return best;
  }

  // Number of gradient-ascent steps applied to the chosen starting point.
  void set_init_ascent_steps(int steps) { ascent_steps_ = steps; }

  // Adam ascent on the log density; a step that leaves the support is undone
  // and the rate halved.
  void ascend(std::vector<double>& x, int steps) const {
    constexpr double b1 = 0.9, b2 = 0.999;
    double rate = 0.02;
    std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0), g(x.size()), trial(x.size());
    double lp = log_density(x, g);
    for (int k = 1; k <= steps && rate > 1e-8; ++k) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = b1 * m[i] + (1 - b1) * g[i];
        v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
        const double mh = m[i] / (1 - std::pow(b1, k)), vh = v[i] / (1 - std::pow(b2, k));
        trial[i] = x[i] + rate * mh / (std::sqrt(vh) + 1e-8);
      }
      std::vector<double> tg(x.size());
      const double tlp = log_density(trial, tg);
      if (!std::isfinite(tlp) || !std::all_of(tg.begin(), tg.end(), [](double d) { return std::isfinite(d); })) {
        rate *= 0.5;
        continue;
      }
      x = trial;
      g = tg;
      lp = tlp;
    }
  }

  // Metropolis scale moves on sigma. The walk relative to w_1 is split into
  // its projection on a piecewise-linear trend with weekly knots and the
  // residual roughness; the move rescales sigma and the roughness by the same
  // factor and keeps the trend, which the data pin down. Returns true if x
  // changed.
  template <class Rng>
  bool auxiliary_update(std::vector<double>& x, Rng& rng) const {
    if (walk_ != WalkParameterization::centered || scale_moves_ == 0 || trend_basis_.cols() == 0) return false;
    const std::size_t t_len = obs_.horizon;
    const auto n = static_cast<Eigen::Index>(t_len - 1);
    const double rough_dim = static_cast<double>(n - trend_basis_.cols());
    const auto& sg = spec_.sigma;
    std::normal_distribution<double> z(0.0, kScaleMoveWidth);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double lp = log_density(x);
    if (!std::isfinite(lp)) return false;
    bool moved = false;
    std::vector<double> trial(x);
    Eigen::VectorXd v(n);
    for (int k = 0; k < scale_moves_; ++k) {
      const double sigma = to_interval(x[t_len + 1], sg.lo, sg.hi).value;
      trial[t_len + 1] = x[t_len + 1] + z(rng);
      const double c = to_interval(trial[t_len + 1], sg.lo, sg.hi).value / sigma;
      if (!(c > 0.0) || !std::isfinite(c)) {
        trial = x;
        continue;
      }
      const double first = contact_floor_inverse(to_interval(x[1], spec_.beta1.lo, spec_.beta1.hi).value);
      for (Eigen::Index j = 0; j < n; ++j) v[j] = x[static_cast<std::size_t>(j) + 2] - first;
      const Eigen::VectorXd trend = trend_basis_ * (trend_basis_.transpose() * v);
      const Eigen::VectorXd moved_v = trend + c * (v - trend);
      for (Eigen::Index j = 0; j < n; ++j) trial[static_cast<std::size_t>(j) + 2] = first + moved_v[j];
      const double lp_trial = log_density(trial);
      const double log_accept = lp_trial - lp + rough_dim * std::log(c);
      if (std::isfinite(lp_trial) && std::log(u(rng)) < log_accept) {
        x = trial;
        lp = lp_trial;
        moved = true;
      } else {
        trial = x;
      }
    }
    return moved;
  }

  // Scale moves per transition; 0 disables them.
  void set_scale_moves(int moves) { scale_moves_ = moves; }

  template <class Rng>
  std::vector<double> prior_point(Rng& rng) const {
    ParameterVector p;
    const double n = obs_.population;
    p.ifr = spec_.ifr.sample(rng);
    p.sigma = spec_.sigma.sample(rng);
    p.gamma = 1.0 / spec_.infectious_period.sample(rng);
    p.i1 = spec_.infectious_fraction.sample(rng) * n;
    const double upper = std::min(spec_.susceptible_fraction.hi, 1.0 - p.i1 / n);
    double s_frac = spec_.susceptible_fraction.sample(rng);
    if (!(s_frac < upper)) s_frac = PriorDescriptor::uniform(spec_.susceptible_fraction.lo, upper).sample(rng);
    p.s1 = s_frac * n;
    p.phi = spec_.phi.sample(rng);
    p.eta = spec_.eta.sample(rng);
    p.beta.assign(obs_.horizon, spec_.beta1.sample(rng));
    return unconstrain(p, spec_, n, walk_);
  }

  double log_density(std::span<const double> x, std::span<double> grad) const;

  double log_density(std::span<const double> x) const {
    std::vector<double> g(x.size());
    return log_density(x, g);
  }

private:
  static constexpr int kInitCandidates = 10;
  static constexpr long kTrendKnotSpacing = 7;

  // Hat functions on walk days 2..T with knots every kTrendKnotSpacing days,
  // anchored at zero on day 1, orthonormalized.
  void build_trend_basis() {
    if (obs_.horizon < 3) return;
    const auto n = static_cast<long>(obs_.horizon) - 1;
    std::vector<long> knots{-1};
    for (long k = kTrendKnotSpacing - 1; k < n - 1; k += kTrendKnotSpacing) knots.push_back(k);
    if (knots.back() != n - 1) knots.push_back(n - 1);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(knots.size() - 1));
    for (std::size_t k = 1; k < knots.size(); ++k)
      for (long j = knots[k - 1] + 1; j < n; ++j) {
        double h = 0.0;
        if (j <= knots[k]) h = static_cast<double>(j - knots[k - 1]) / static_cast<double>(knots[k] - knots[k - 1]);
        else if (k + 1 < knots.size() && j < knots[k + 1])
          h = static_cast<double>(knots[k + 1] - j) / static_cast<double>(knots[k + 1] - knots[k]);
        b(j, static_cast<Eigen::Index>(k - 1)) = h;
      }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(b);
    trend_basis_ = qr.householderQ() * Eigen::MatrixXd::Identity(n, b.cols());
  }

  static constexpr double kScaleMoveWidth = 0.2;
  int ascent_steps_ = 300;
  int scale_moves_ = 4;
  Eigen::MatrixXd trend_basis_;  // orthonormal columns spanning the weekly trend
  ObservationSet obs_;
  PriorSpec spec_;
  WalkParameterization walk_;
  double death_log_factorials_ = 0.0;
};

inline double SirPosterior::log_density(std::span<const double> x, std::span<double> grad) const {
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  const std::size_t t_len = obs_.horizon;
  const double n = obs_.population;
  if (x.size() != dimension() || grad.size() != dimension()) throw std::invalid_argument("dimension mismatch");
  std::fill(grad.begin(), grad.end(), 0.0);
  for (double v : x)
    if (!std::isfinite(v)) return ninf;

  // --- constrain ---------------------------------------------------------
  const auto ifr = to_interval(x[0], spec_.ifr.lo, spec_.ifr.hi);
  const auto b1 = to_interval(x[1], spec_.beta1.lo, spec_.beta1.hi);
  const auto sig = to_interval(x[t_len + 1], spec_.sigma.lo, spec_.sigma.hi);
  const auto per = to_interval(x[t_len + 2], spec_.infectious_period.lo, spec_.infectious_period.hi);
  const auto fr = detail::initial_fractions(x[t_len + 3], x[t_len + 4], spec_);
  const auto phi_v = to_interval(x[t_len + 5], spec_.phi.lo, spec_.phi.hi);
  const auto eta_v = to_interval(x[t_len + 6], spec_.eta.lo, spec_.eta.hi);
  const double sigma = sig.value;
  const double gamma = 1.0 / per.value;
  const double phi = phi_v.value;
  const double eta = eta_v.value;
  const double ifr_val = ifr.value;

  // Priors on the scalars plus the log-Jacobian of every bounded map.
  double lp = spec_.ifr.log_density(ifr_val) + spec_.beta1.log_density(b1.value) + spec_.sigma.log_density(sigma) +
              spec_.infectious_period.log_density(per.value) +
              spec_.infectious_fraction.log_density(fr.infectious.value) +
              spec_.susceptible_fraction.log_density(fr.susceptible.value) + spec_.phi.log_density(phi) +
              spec_.eta.log_density(eta);
  lp += ifr.log_jac + b1.log_jac + sig.log_jac + per.log_jac + fr.infectious.log_jac + fr.susceptible.log_jac +
        phi_v.log_jac + eta_v.log_jac;
  if (!std::isfinite(lp) || !(sigma > 0.0) || !(eta > 0.0) || !(phi > 0.0)) return ninf;

  const bool centered = walk_ == WalkParameterization::centered;
  std::vector<double> w(t_len), beta(t_len);
  w[0] = contact_floor_inverse(b1.value);
  beta[0] = b1.value;
  for (std::size_t t = 1; t < t_len; ++t) {
    w[t] = detail::walk_value(walk_, x[1 + t], w[t - 1], w[0], sigma);
    beta[t] = contact_floor(w[t]);
  }

  // Random-walk terms: standard-normal increments once the sigma Jacobian
  // cancels; centered coordinates carry the 1/sigma factors directly.
  for (std::size_t t = 1; t < t_len; ++t) {
    const double z = (w[t] - w[t - 1]) / sigma;
    lp += -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
    if (centered) lp -= std::log(sigma);
  }

  // --- SIR forward ---------------------------------------------------------
  std::vector<double> S(t_len + 1), I(t_len + 1), R(t_len + 1), nu(t_len);
  S[0] = fr.susceptible.value * n;
  I[0] = fr.infectious.value * n;
  R[0] = n - S[0] - I[0];
  for (std::size_t d = 0; d < t_len; ++d) {
    const double f = beta[d] * I[d] * S[d] / n;
    S[d + 1] = S[d] - f;
    I[d + 1] = I[d] + f - gamma * I[d];
    R[d + 1] = R[d] + gamma * I[d];
    nu[d] = f;
    if (S[d + 1] < 0.0) return ninf;
  }

  std::vector<double> gS(t_len + 1, 0.0), gI(t_len + 1, 0.0), gR(t_len + 1, 0.0), gnu(t_len, 0.0);
  double g_ifr = 0.0, g_phi = 0.0, g_eta = 0.0;
  double ll = 0.0;

  // --- deaths ----------------------------------------------------------------
  const auto& tau = obs_.delay.pmf;
  const std::size_t width = tau.size();
  if (!obs_.death_series.empty()) {
    std::vector<double> conv(t_len, 0.0);
    for (std::size_t k = 0; k < t_len; ++k) {
      const std::size_t stop = std::min(t_len, k + width);
      for (std::size_t t = k; t < stop; ++t) conv[t] += nu[k] * tau[t - k];
    }
    std::vector<double> gmu(t_len, 0.0);
    ll -= death_log_factorials_;
    for (const auto& deaths : obs_.death_series) {
      for (std::size_t t = 0; t < t_len; ++t) {
        const double mu = ifr_val * conv[t];
        const double dcount = deaths[t];
        if (mu <= 0.0) {
          if (dcount > 0.0) return ninf;
          continue;
        }
        ll += dcount * std::log(mu) - mu;
        gmu[t] += dcount / mu - 1.0;
      }
    }
    for (std::size_t t = 0; t < t_len; ++t) g_ifr += gmu[t] * conv[t];
    for (std::size_t k = 0; k < t_len; ++k) {
      const std::size_t stop = std::min(t_len, k + width);
      double acc = 0.0;
      for (std::size_t t = k; t < stop; ++t) acc += gmu[t] * tau[t - k];
      gnu[k] = ifr_val * acc;
    }
  }

  // --- surveys ---------------------------------------------------------------
  for (const auto& sv : obs_.surveys) {
    const std::vector<double>& comp = sv.kind == SurveyKind::viral ? I : R;
    std::vector<double>& gcomp = sv.kind == SurveyKind::viral ? gI : gR;
    const double days = static_cast<double>(sv.end_day - sv.start_day + 1);
    double acc = 0.0;
    for (std::size_t d = sv.start_day; d <= sv.end_day; ++d) acc += comp[d + 1];
    const double theta = acc / (n * days);
    if (!(theta > 0.0 && theta < 1.0)) return ninf;
    const double var = theta * (1.0 - theta) / sv.sample_size;
    const double dvar = (1.0 - 2.0 * theta) / sv.sample_size;
    const double resid = sv.estimate - theta;
    ll += normal_logpdf(sv.estimate, theta, var);
    const double dtheta = -0.5 * dvar / var + resid / var + 0.5 * resid * resid * dvar / (var * var);
    const double per_day = dtheta / (n * days);
    for (std::size_t d = sv.start_day; d <= sv.end_day; ++d) gcomp[d + 1] += per_day;
  }

  // --- aggregated positive tests ----------------------------------------------
  for (const auto& pd : obs_.periods) {
    if (pd.tests <= 0.0) return ninf;
    const double a = case_fraction(phi, pd.cum_tests_end, n);
    const double b = case_fraction(phi, pd.cum_tests_before(), n);
    const std::size_t e = pd.end_day + 1;
    const std::size_t s = pd.start_day;
    const double mean = a * (I[e] + R[e]) - b * (I[s] + R[s]);
    const double var = eta * eta * pd.tests / n;
    const double resid = pd.cases - mean;
    ll += normal_logpdf(pd.cases, mean, var);
    const double dmean = resid / var;
    gI[e] += dmean * a;
    gR[e] += dmean * a;
    gI[s] -= dmean * b;
    gR[s] -= dmean * b;
    g_phi += dmean * mean / phi;
    g_eta += -1.0 / eta + resid * resid / (var * eta);
  }

  const double total = lp + ll;
  if (!std::isfinite(total)) return ninf;

  // --- reverse sweep through the recursion ------------------------------------
  std::vector<double> gbeta(t_len, 0.0);
  double g_gamma = 0.0;
  for (std::size_t d = t_len; d-- > 0;) {
    const double gf = gnu[d] - gS[d + 1] + gI[d + 1];
    gS[d] += gS[d + 1];
    gI[d] += gI[d + 1] * (1.0 - gamma) + gR[d + 1] * gamma;
    gR[d] += gR[d + 1];
    g_gamma += (gR[d + 1] - gI[d + 1]) * I[d];
    gbeta[d] = gf * I[d] * S[d] / n;
    gI[d] += gf * beta[d] * S[d] / n;
    gS[d] += gf * beta[d] * I[d] / n;
  }
  // R_1 = N - S_1 - I_1
  double g_sfrac = n * (gS[0] - gR[0]) + spec_.susceptible_fraction.dlog_density(fr.susceptible.value);
  double g_ifrac = n * (gI[0] - gR[0]) + spec_.infectious_fraction.dlog_density(fr.infectious.value);

  // latent walk
  double g_sigma = 0.0;
  double g_w1 = 0.0;
  if (centered) {
    const double s2 = sigma * sigma;
    for (std::size_t t = 1; t < t_len; ++t) {
      const double step = w[t] - w[t - 1];
      grad[1 + t] += gbeta[t] * contact_floor_slope(w[t]) - step / s2;
      if (t > 1) grad[t] += step / s2;
      else g_w1 += step / s2;
      g_sigma += -1.0 / sigma + step * step / (s2 * sigma);
    }
  } else if (walk_ == WalkParameterization::cumulative) {
    for (std::size_t t = 1; t < t_len; ++t) {
      const double gw = gbeta[t] * contact_floor_slope(w[t]);
      const double v = x[1 + t];
      const double v_prev = t > 1 ? x[t] : 0.0;
      grad[1 + t] += sigma * gw - (v - v_prev);
      if (t > 1) grad[t] += v - v_prev;
      g_w1 += gw;
      g_sigma += gw * v;
    }
  } else {
    for (std::size_t t = t_len; t-- > 1;) {
      g_w1 += gbeta[t] * contact_floor_slope(w[t]);
      const double z = x[1 + t];
      grad[1 + t] = sigma * g_w1 - z;
      g_sigma += z * g_w1;
    }
  }
  const double g_b1 = gbeta[0] + g_w1 * contact_floor_inverse_slope(b1.value) + spec_.beta1.dlog_density(b1.value);

  g_ifr += spec_.ifr.dlog_density(ifr_val);
  g_sigma += spec_.sigma.dlog_density(sigma);
  const double g_period = g_gamma * (-1.0 / (per.value * per.value)) + spec_.infectious_period.dlog_density(per.value);
  g_phi += spec_.phi.dlog_density(phi);
  g_eta += spec_.eta.dlog_density(eta);

  // S_1/N sits on (lo, upper) where upper may track 1 - I_1/N.
  if (fr.upper_tracks_i1) {
    const double width = fr.upper - spec_.susceptible_fraction.lo;
    const double s = (fr.susceptible.value - spec_.susceptible_fraction.lo) / width;
    g_ifrac += -g_sfrac * s - 1.0 / width;
  }

  grad[0] = g_ifr * ifr.dvalue + ifr.dlog_jac;
  grad[1] = g_b1 * b1.dvalue + b1.dlog_jac;
  grad[t_len + 1] = g_sigma * sig.dvalue + sig.dlog_jac;
  grad[t_len + 2] = g_period * per.dvalue + per.dlog_jac;
  grad[t_len + 3] = g_ifrac * fr.infectious.dvalue + fr.infectious.dlog_jac;
  grad[t_len + 4] = g_sfrac * fr.susceptible.dvalue + fr.susceptible.dlog_jac;
  grad[t_len + 5] = g_phi * phi_v.dvalue + phi_v.dlog_jac;
  grad[t_len + 6] = g_eta * eta_v.dvalue + eta_v.dlog_jac;
  return total;
}

}  // namespace sirbayes

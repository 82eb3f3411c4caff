#pragma once

// Dynamic Hamiltonian Monte Carlo with multinomial trajectory sampling, a
// diagonal or dense metric, dual-averaging step-size adaptation and windowed metric
// estimation during warmup. Chains run on worker threads; results are merged
// in chain order so output never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "sirbayes/diagnostics.hpp"

namespace sirbayes {

template <class T>
concept LogDensityTarget = requires(const T& t, std::span<const double> x, std::span<double> g) {
  { t.dimension() } -> std::convertible_to<std::size_t>;
  { t.log_density(x, g) } -> std::convertible_to<double>;
};

enum class MetricKind { diag, dense };

struct SamplerConfig {
  std::size_t chains = 4;
  std::size_t total_steps = 2000;
  std::size_t warmup_steps = 1000;
  double target_accept = 0.8;
  std::size_t max_tree_depth = 10;
  MetricKind metric = MetricKind::diag;
  std::uint64_t seed = 1;
  // Worker threads; 0 means the SIRBAYES_THREADS cap or the hardware count.
  std::size_t threads = 0;

  void validate() const {
    if (chains < 1) throw std::invalid_argument("sampler needs at least one chain");
    if (!(warmup_steps < total_steps)) throw std::invalid_argument("warmup steps must be fewer than total steps");
    if (!(target_accept > 0.5 && target_accept < 1.0)) throw std::invalid_argument("target accept must lie in (0.5, 1)");
    if (max_tree_depth < 1) throw std::invalid_argument("max tree depth must be positive");
  }
};

class SamplerError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Post-warmup draws in constrained coordinates, stored row-major with rows
// ordered by (chain, iteration).
struct PosteriorDraws {
  std::vector<std::string> names;
  std::size_t chains = 0;
  std::size_t per_chain = 0;
  std::vector<double> values;
  std::vector<std::size_t> chain_id;
  std::vector<std::uint8_t> divergent;
  std::vector<std::uint8_t> max_depth_hit;
  std::vector<double> accept_stat;
  std::vector<double> step_size;  // adapted step size per chain
  std::vector<double> r_hat;
  std::vector<double> ess;

  std::size_t size() const noexcept { return chains * per_chain; }
  std::size_t dimension() const noexcept { return names.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * names.size() + col]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * names.size(), names.size()}; }

  std::size_t index_of(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw std::out_of_range("no parameter named " + name);
    return static_cast<std::size_t>(it - names.begin());
  }

  std::vector<double> column(std::size_t col) const {
    std::vector<double> out(size());
    for (std::size_t r = 0; r < size(); ++r) out[r] = at(r, col);
    return out;
  }
  std::vector<double> column(const std::string& name) const { return column(index_of(name)); }

  // One vector per chain for a single parameter.
  std::vector<std::vector<double>> by_chain(std::size_t col) const {
    std::vector<std::vector<double>> out(chains, std::vector<double>(per_chain));
    for (std::size_t c = 0; c < chains; ++c)
      for (std::size_t k = 0; k < per_chain; ++k) out[c][k] = at(c * per_chain + k, col);
    return out;
  }

  std::size_t divergences() const { return static_cast<std::size_t>(std::count(divergent.begin(), divergent.end(), 1)); }
  double divergence_rate() const { return size() ? static_cast<double>(divergences()) / static_cast<double>(size()) : 0.0; }
  double max_r_hat() const {
    double worst = 0.0;
    for (double r : r_hat) worst = std::isnan(r) ? worst : std::max(worst, r);
    return worst;
  }

  // Recomputes r_hat and ess when the draw layout supports it, NaN otherwise.
  void update_diagnostics() {
    r_hat.assign(dimension(), std::numeric_limits<double>::quiet_NaN());
    ess.assign(dimension(), std::numeric_limits<double>::quiet_NaN());
    if (chains < 2 || per_chain < 4) return;
    for (std::size_t j = 0; j < dimension(); ++j) {
      const auto split = by_chain(j);
      r_hat[j] = split_rhat(split);
      ess[j] = bulk_ess(split);
    }
  }
};

// Position, momentum and cached log density with its gradient.
struct PhasePoint {
  std::vector<double> q, p, grad;
  double logp = 0.0;
};

// Euclidean Hamiltonian with either a diagonal or a dense inverse metric.
template <LogDensityTarget Target>
class Hamiltonian {
public:
  Hamiltonian(const Target& target, std::size_t dim) : target_(target), inv_diag_(dim, 1.0) {}

  bool dense() const noexcept { return dense_; }

  void set_diag(std::vector<double> inv_metric) {
    dense_ = false;
    inv_diag_ = std::move(inv_metric);
  }

  void set_dense(const Eigen::MatrixXd& inv_metric) {
    dense_ = true;
    inv_dense_ = inv_metric;
    chol_upper_ = inv_metric.llt().matrixU();
  }

  void evaluate(PhasePoint& z) const {
    z.grad.resize(z.q.size());
    z.logp = target_.log_density(std::span<const double>(z.q), std::span<double>(z.grad));
    if (std::isnan(z.logp)) z.logp = -std::numeric_limits<double>::infinity();
  }

  std::vector<double> velocity(const PhasePoint& z) const {
    std::vector<double> v(z.p.size());
    if (dense_) {
      Eigen::Map<Eigen::VectorXd>(v.data(), v.size()) =
          inv_dense_ * Eigen::Map<const Eigen::VectorXd>(z.p.data(), z.p.size());
    } else {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = inv_diag_[i] * z.p[i];
    }
    return v;
  }

  double kinetic(const PhasePoint& z) const {
    const auto v = velocity(z);
    double k = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) k += z.p[i] * v[i];
    return 0.5 * k;
  }

  double hamiltonian(const PhasePoint& z) const {
    const double h = -z.logp + kinetic(z);
    return std::isnan(h) ? std::numeric_limits<double>::infinity() : h;
  }

  template <class Rng>
  void sample_momentum(PhasePoint& z, Rng& rng) const {
    std::normal_distribution<double> unit(0.0, 1.0);
    z.p.resize(z.q.size());
    for (double& v : z.p) v = unit(rng);
    if (dense_) {
      Eigen::Map<Eigen::VectorXd> p(z.p.data(), z.p.size());
      p = chol_upper_.triangularView<Eigen::Upper>().solve(Eigen::VectorXd(p));
    } else {
      for (std::size_t i = 0; i < z.p.size(); ++i) z.p[i] /= std::sqrt(inv_diag_[i]);
    }
  }

  void leapfrog(PhasePoint& z, double eps) const {
    const std::size_t d = z.q.size();
    for (std::size_t i = 0; i < d; ++i) z.p[i] += 0.5 * eps * z.grad[i];
    const auto v = velocity(z);
    for (std::size_t i = 0; i < d; ++i) z.q[i] += eps * v[i];
    evaluate(z);
    for (std::size_t i = 0; i < d; ++i) z.p[i] += 0.5 * eps * z.grad[i];
  }

private:
  const Target& target_;
  bool dense_ = false;
  std::vector<double> inv_diag_;
  Eigen::MatrixXd inv_dense_;
  Eigen::MatrixXd chol_upper_;
};

namespace detail {

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> add(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline bool no_u_turn(const std::vector<double>& v_minus, const std::vector<double>& v_plus,
                      const std::vector<double>& rho) {
  return dot(v_plus, rho) > 0.0 && dot(v_minus, rho) > 0.0;
}

// Nesterov dual averaging on log step size.
struct DualAveraging {
  double delta = 0.8, gamma = 0.05, kappa = 0.75, t0 = 10.0;
  double mu = 0.0, s_bar = 0.0, x_bar = 0.0;
  double counter = 0.0;

  void restart(double eps) {
    mu = std::log(10.0 * eps);
    s_bar = x_bar = counter = 0.0;
  }
  double learn(double accept) {
    counter += 1.0;
    accept = std::min(accept, 1.0);
    const double eta = 1.0 / (counter + t0);
    s_bar = (1.0 - eta) * s_bar + eta * (delta - accept);
    const double x = mu - s_bar * std::sqrt(counter) / gamma;
    const double w = std::pow(counter, -kappa);
    x_bar = (1.0 - w) * x_bar + w * x;
    return std::exp(x);
  }
  double final_step() const { return std::exp(x_bar); }
};

// Welford running variance.
struct RunningVariance {
  std::size_t n = 0;
  std::vector<double> mean, m2;

  explicit RunningVariance(std::size_t d) : mean(d, 0.0), m2(d, 0.0) {}
  void restart() {
    n = 0;
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(m2.begin(), m2.end(), 0.0);
  }
  void add(const std::vector<double>& q) {
    ++n;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double delta = q[i] - mean[i];
      mean[i] += delta / static_cast<double>(n);
      m2[i] += delta * (q[i] - mean[i]);
    }
  }
  // Sample variance shrunk toward a small constant.
  std::vector<double> regularized() const {
    const double dn = static_cast<double>(n);
    std::vector<double> var(mean.size());
    for (std::size_t i = 0; i < var.size(); ++i)
      var[i] = (dn / (dn + 5.0)) * (m2[i] / (dn - 1.0)) + 1e-3 * (5.0 / (dn + 5.0));
    return var;
  }
};

// Welford running covariance for the dense metric.
struct RunningCovariance {
  std::size_t n = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd m2;

  explicit RunningCovariance(std::size_t d) : mean(Eigen::VectorXd::Zero(d)), m2(Eigen::MatrixXd::Zero(d, d)) {}
  void restart() {
    n = 0;
    mean.setZero();
    m2.setZero();
  }
  void add(const std::vector<double>& q) {
    ++n;
    const Eigen::Map<const Eigen::VectorXd> x(q.data(), q.size());
    const Eigen::VectorXd delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += (x - mean) * delta.transpose();
  }
  Eigen::MatrixXd regularized() const {
    const double dn = static_cast<double>(n);
    Eigen::MatrixXd cov = m2 / (dn - 1.0);
    cov = 0.5 * (cov + cov.transpose()).eval();
    cov *= dn / (dn + 5.0);
    cov.diagonal().array() += 1e-3 * (5.0 / (dn + 5.0));
    return cov;
  }
};

// Warmup schedule: initial step-size-only buffer (15%), doubling metric
// windows from a base of 25 with the last stretched to fit, terminal
// step-size-only buffer (10%).
class WarmupSchedule {
public:
  explicit WarmupSchedule(std::size_t warmup) : warmup_(warmup) {
    if (warmup < 20) {
      enabled_ = false;
      return;
    }
    init_ = warmup * 15 / 100;
    term_ = warmup / 10;
    window_ = std::min<std::size_t>(25, warmup - init_ - term_);
    next_end_ = init_ + window_ - 1;
    stretch();
  }

  bool in_window(std::size_t it) const { return enabled_ && it >= init_ && it < warmup_ - term_; }
  bool window_ends(std::size_t it) const { return enabled_ && it == next_end_ && it < warmup_ - term_; }

  void advance(std::size_t it) {
    if (next_end_ == warmup_ - term_ - 1) {
      next_end_ = warmup_;  // no more windows
      return;
    }
    window_ *= 2;
    next_end_ = it + window_;
    stretch();
  }

private:
  void stretch() {
    const std::size_t last = warmup_ - term_ - 1;
    if (next_end_ >= last || next_end_ + 2 * window_ > last) next_end_ = last;
  }

  std::size_t warmup_ = 0, init_ = 0, term_ = 0, window_ = 0, next_end_ = 0;
  bool enabled_ = true;
};

template <class Target, class Rng>
std::vector<double> initial_position(const Target& target, Rng& rng) {
  const std::size_t d = target.dimension();
  std::vector<double> grad(d);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<double> x;
    if constexpr (requires { target.initial_point(rng); }) {
      x = target.initial_point(rng);
    } else {
      std::uniform_real_distribution<double> u(-2.0, 2.0);
      x.resize(d);
      for (double& v : x) v = u(rng);
    }
    const double lp = target.log_density(std::span<const double>(x), std::span<double>(grad));
    if (std::isfinite(lp) && std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); })) return x;
  }
  throw SamplerError("could not find a finite initial point after 100 attempts");
}

struct Transition {
  double accept_stat = 0.0;
  std::size_t depth = 0;
  bool divergent = false;
};

template <LogDensityTarget Target, class Rng>
class NutsChain {
public:
  NutsChain(const Target& target, const SamplerConfig& cfg, Rng& rng)
      : ham_(target, target.dimension()), cfg_(cfg), rng_(rng) {}

  Hamiltonian<Target>& hamiltonian() noexcept { return ham_; }
  double step_size() const noexcept { return eps_; }
  void set_step_size(double eps) noexcept { eps_ = eps; }

  // Doubles or halves the step size until one leapfrog step crosses an
  // acceptance probability of 0.8.
  void init_step_size(const PhasePoint& start) {
    const double log08 = std::log(0.8);
    auto trial = [&]() {
      PhasePoint z = start;
      ham_.sample_momentum(z, rng_);
      const double h0 = ham_.hamiltonian(z);
      ham_.leapfrog(z, eps_);
      return h0 - ham_.hamiltonian(z);
    };
    const int direction = trial() > log08 ? 1 : -1;
    for (;;) {
      const double delta = trial();
      if (direction == 1 && !(delta > log08)) break;
      if (direction == -1 && !(delta < log08)) break;
      eps_ = direction == 1 ? 2.0 * eps_ : 0.5 * eps_;
      if (eps_ > 1e7) throw SamplerError("step size diverged to infinity during initialization");
      if (eps_ == 0.0) throw SamplerError("step size collapsed to zero during initialization");
    }
  }

  Transition transition(PhasePoint& z) {
    ham_.sample_momentum(z, rng_);
    const double h0 = ham_.hamiltonian(z);
    PhasePoint z_fwd = z, z_bck = z, z_sample = z, z_propose = z;
    std::vector<double> p_fwd_fwd = z.p, p_fwd_bck = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
    std::vector<double> v_fwd_fwd = ham_.velocity(z), v_fwd_bck = v_fwd_fwd, v_bck_fwd = v_fwd_fwd,
                        v_bck_bck = v_fwd_fwd;
    std::vector<double> rho = z.p;
    double log_sum_weight = 0.0;
    state_ = {h0, 0, 0.0, false};
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::size_t depth = 0;
    const std::size_t d = z.q.size();

    while (depth < cfg_.max_tree_depth) {
      std::vector<double> rho_fwd(d, 0.0), rho_bck(d, 0.0);
      double lsw_subtree = -std::numeric_limits<double>::infinity();
      bool valid = false;
      if (unif(rng_) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        v_bck_fwd = v_fwd_bck;
        valid = build_tree(depth, z_fwd, z_propose, v_fwd_bck, v_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, 1.0,
                           lsw_subtree);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        v_fwd_bck = v_bck_fwd;
        valid = build_tree(depth, z_bck, z_propose, v_bck_fwd, v_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, -1.0,
                           lsw_subtree);
      }
      if (!valid) break;
      ++depth;
      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (unif(rng_) < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
      rho = add(rho_bck, rho_fwd);
      bool persist = no_u_turn(v_bck_bck, v_fwd_fwd, rho);
      persist = persist && no_u_turn(v_bck_bck, v_fwd_bck, add(rho_bck, p_fwd_bck));
      persist = persist && no_u_turn(v_bck_fwd, v_fwd_fwd, add(rho_fwd, p_bck_fwd));
      if (!persist) break;
    }
    z = z_sample;
    Transition out;
    out.depth = depth;
    out.divergent = state_.divergent;
    out.accept_stat = state_.n_leapfrog ? state_.sum_metro / static_cast<double>(state_.n_leapfrog) : 0.0;
    return out;
  }

private:
  struct TreeState {
    double h0 = 0.0;
    std::size_t n_leapfrog = 0;
    double sum_metro = 0.0;
    bool divergent = false;
  };

  static constexpr double kMaxEnergyError = 1000.0;

  // Extends the trajectory from z by 2^depth leapfrog steps in direction
  // sign, sampling z_propose uniformly (by weight) within the new subtree.
  bool build_tree(std::size_t depth, PhasePoint& z, PhasePoint& z_propose, std::vector<double>& v_beg,
                  std::vector<double>& v_end, std::vector<double>& rho, std::vector<double>& p_beg,
                  std::vector<double>& p_end, double sign, double& log_sum_weight) {
    if (depth == 0) {
      ham_.leapfrog(z, sign * eps_);
      ++state_.n_leapfrog;
      const double h = ham_.hamiltonian(z);
      if (h - state_.h0 > kMaxEnergyError) state_.divergent = true;
      log_sum_weight = log_sum_exp(log_sum_weight, state_.h0 - h);
      state_.sum_metro += state_.h0 - h > 0.0 ? 1.0 : std::exp(state_.h0 - h);
      z_propose = z;
      v_beg = ham_.velocity(z);
      v_end = v_beg;
      for (std::size_t i = 0; i < rho.size(); ++i) rho[i] += z.p[i];
      p_beg = z.p;
      p_end = p_beg;
      return !state_.divergent;
    }
    const std::size_t d = rho.size();
    std::vector<double> rho_init(d, 0.0), p_init_end(d), v_init_end(d);
    double lsw_init = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, z, z_propose, v_beg, v_init_end, rho_init, p_beg, p_init_end, sign, lsw_init))
      return false;

    PhasePoint z_propose_final = z;
    std::vector<double> rho_final(d, 0.0), p_final_beg(d), v_final_beg(d);
    double lsw_final = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, z, z_propose_final, v_final_beg, v_end, rho_final, p_final_beg, p_end, sign, lsw_final))
      return false;

    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (unif(rng_) < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }

    const auto rho_subtree = add(rho_init, rho_final);
    for (std::size_t i = 0; i < d; ++i) rho[i] += rho_subtree[i];
    bool persist = no_u_turn(v_beg, v_end, rho_subtree);
    persist = persist && no_u_turn(v_beg, v_final_beg, add(rho_init, p_final_beg));
    persist = persist && no_u_turn(v_init_end, v_end, add(rho_final, p_init_end));
    return persist;
  }

  Hamiltonian<Target> ham_;
  const SamplerConfig& cfg_;
  Rng& rng_;
  double eps_ = 1.0;
  TreeState state_;
};

struct ChainOutput {
  std::vector<double> values;  // per_chain x constrained dimension
  std::vector<std::uint8_t> divergent, max_depth_hit;
  std::vector<double> accept_stat;
  double step_size = 0.0;
};

template <class Target>
std::vector<double> constrained_of(const Target& target, const std::vector<double>& q) {
  if constexpr (requires { target.constrain(std::span<const double>(q)); }) {
    return target.constrain(std::span<const double>(q));
  } else {
    return q;
  }
}

template <LogDensityTarget Target>
ChainOutput run_chain(const Target& target, const SamplerConfig& cfg, std::size_t chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(chain), 0x5eedu};
  std::mt19937_64 rng(seq);
  NutsChain<Target, std::mt19937_64> nuts(target, cfg, rng);
  auto& ham = nuts.hamiltonian();

  PhasePoint z;
  z.q = initial_position(target, rng);
  ham.evaluate(z);
  nuts.init_step_size(z);

  DualAveraging dual;
  dual.delta = cfg.target_accept;
  dual.restart(nuts.step_size());
  WarmupSchedule schedule(cfg.warmup_steps);
  RunningVariance estimator(z.q.size());
  RunningCovariance cov_estimator(cfg.metric == MetricKind::dense ? z.q.size() : 0);

  ChainOutput out;
  const std::size_t kept = cfg.total_steps - cfg.warmup_steps;
  out.divergent.reserve(kept);
  out.accept_stat.reserve(kept);
  for (std::size_t it = 0; it < cfg.total_steps; ++it) {
    const Transition tr = nuts.transition(z);
    if constexpr (requires { target.auxiliary_update(z.q, rng); }) {
      if (target.auxiliary_update(z.q, rng)) ham.evaluate(z);
    }
    if (it < cfg.warmup_steps) {
      nuts.set_step_size(dual.learn(tr.accept_stat));
      const bool dense = cfg.metric == MetricKind::dense;
      if (schedule.in_window(it)) dense ? cov_estimator.add(z.q) : estimator.add(z.q);
      if (schedule.window_ends(it)) {
        schedule.advance(it);
        if (dense) {
          ham.set_dense(cov_estimator.regularized());
          cov_estimator.restart();
        } else {
          ham.set_diag(estimator.regularized());
          estimator.restart();
        }
        nuts.init_step_size(z);
        dual.restart(nuts.step_size());
      }
      if (it + 1 == cfg.warmup_steps) nuts.set_step_size(dual.final_step());
      continue;
    }
    const auto c = constrained_of(target, z.q);
    out.values.insert(out.values.end(), c.begin(), c.end());
    out.divergent.push_back(tr.divergent ? 1 : 0);
    out.max_depth_hit.push_back(tr.depth >= cfg.max_tree_depth ? 1 : 0);
    out.accept_stat.push_back(tr.accept_stat);
  }
  out.step_size = nuts.step_size();
  return out;
}

inline std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested;
  if (n == 0) {
    n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* cap = std::getenv("SIRBAYES_THREADS")) {
      const long v = std::strtol(cap, nullptr, 10);
      if (v > 0) n = std::min(n, static_cast<std::size_t>(v));
    }
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs job(i) for i in [0, jobs) on a small pool; job writes its own slot.
template <class Job>
void parallel_for(std::size_t jobs, std::size_t threads, Job&& job) {
  const std::size_t workers = worker_count(threads, jobs);
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (std::size_t i = next++; i < jobs; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

template <class Target>
std::vector<std::string> target_names(const Target& target) {
  if constexpr (requires { target.parameter_names(); }) {
    return target.parameter_names();
  } else {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < target.dimension(); ++i) names.push_back("x" + std::to_string(i));
    return names;
  }
}

template <LogDensityTarget Target>
PosteriorDraws sample(const Target& target, const SamplerConfig& cfg) {
  cfg.validate();
  std::vector<detail::ChainOutput> outputs(cfg.chains);
  detail::parallel_for(cfg.chains, cfg.threads, [&](std::size_t c) { outputs[c] = detail::run_chain(target, cfg, c); });

  PosteriorDraws draws;
  draws.names = target_names(target);
  draws.chains = cfg.chains;
  draws.per_chain = cfg.total_steps - cfg.warmup_steps;
  for (std::size_t c = 0; c < cfg.chains; ++c) {
    auto& o = outputs[c];
    if (o.values.size() != draws.per_chain * draws.names.size())
      throw SamplerError("constrained draw width does not match parameter names");
    draws.values.insert(draws.values.end(), o.values.begin(), o.values.end());
    draws.chain_id.insert(draws.chain_id.end(), draws.per_chain, c);
    draws.divergent.insert(draws.divergent.end(), o.divergent.begin(), o.divergent.end());
    draws.max_depth_hit.insert(draws.max_depth_hit.end(), o.max_depth_hit.begin(), o.max_depth_hit.end());
    draws.accept_stat.insert(draws.accept_stat.end(), o.accept_stat.begin(), o.accept_stat.end());
    draws.step_size.push_back(o.step_size);
  }
  draws.update_diagnostics();
  return draws;
}

}  // namespace sirbayes

#pragma once

// Discrete-time SIR recursion with a time-varying contact rate, plus the
// vaccination-augmented variant used for forward projections.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sirbayes {

class DynamicsError : public std::invalid_argument {
public:
  DynamicsError(const std::string& what, std::ptrdiff_t day = -1)
      : std::invalid_argument(day >= 0 ? what + " (day " + std::to_string(day) + ")" : what), day_(day) {}
  std::ptrdiff_t day() const noexcept { return day_; }

private:
  std::ptrdiff_t day_;
};

struct SirState {
  double s = 0.0;
  double i = 0.0;
  double r = 0.0;

  double total() const noexcept { return s + i + r; }
  bool valid() const noexcept { return s >= 0.0 && i >= 0.0 && r >= 0.0; }
};

// states[0] is the initial state; states[d + 1] is the state at the end of
// day d. nu[d] = new infections on day d, vaccinated[d] = susceptibles
// immunized on day d (empty unless produced by simulate_with_vaccination).
struct SirTrajectory {
  std::vector<SirState> states;
  std::vector<double> nu;
  std::vector<double> vaccinated;
  double population = 0.0;

  std::size_t days() const noexcept { return nu.size(); }
};

struct ContactPath {
  std::vector<double> beta;
  double sigma = 0.0;
};

struct VaccinationSchedule {
  std::vector<double> second_doses;
  double confirmed_cumulative = 0.0;
  // Fraction of each day's new infections that become confirmed cases and
  // leave the eligible pool. Zero keeps the confirmed count fixed.
  double confirmed_fraction = 0.0;
};

namespace detail {

inline void check_step_args(const SirState& state, double beta, double gamma, std::ptrdiff_t day) {
  if (!(beta >= 0.0)) throw DynamicsError("contact rate must be non-negative", day);
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DynamicsError("removal rate must lie in (0, 1]", day);
  if (!state.valid()) throw DynamicsError("negative compartment", day);
}

inline SirState step_unchecked(const SirState& state, double beta, double gamma, double n, double& infections) {
  infections = beta / n * state.i * state.s;
  const double removals = gamma * state.i;
  return {state.s - infections, state.i + infections - removals, state.r + removals};
}

}  // namespace detail

inline SirState step(const SirState& state, double beta, double gamma, double n) {
  detail::check_step_args(state, beta, gamma, -1);
  double infections = 0.0;
  return detail::step_unchecked(state, beta, gamma, n, infections);
}

inline SirTrajectory simulate(const SirState& initial, const ContactPath& contacts, double gamma, double n,
                              std::size_t days) {
  if (days != contacts.beta.size()) throw DynamicsError("horizon must equal the contact path length");
  if (!initial.valid()) throw DynamicsError("negative compartment in initial state");
  SirTrajectory traj;
  traj.population = n;
  traj.states.reserve(days + 1);
  traj.nu.reserve(days);
  traj.states.push_back(initial);
  for (std::size_t d = 0; d < days; ++d) {
    const SirState& cur = traj.states.back();
    detail::check_step_args(cur, contacts.beta[d], gamma, static_cast<std::ptrdiff_t>(d));
    double infections = 0.0;
    SirState next = detail::step_unchecked(cur, contacts.beta[d], gamma, n, infections);
    if (!next.valid()) throw DynamicsError("step produced a negative compartment", static_cast<std::ptrdiff_t>(d));
    traj.nu.push_back(cur.s - next.s);
    traj.states.push_back(next);
  }
  return traj;
}

// Doses are spread uniformly over everyone not yet vaccinated and not a
// confirmed case; the susceptible share of day d's doses is
// doses[d] * S_d / (N - confirmed - vaccinated so far), clamped so S stays >= 0.
inline SirTrajectory simulate_with_vaccination(const SirState& initial, const ContactPath& contacts, double gamma,
                                               const VaccinationSchedule& schedule, double n, std::size_t days) {
  if (days != contacts.beta.size()) throw DynamicsError("horizon must equal the contact path length");
  if (schedule.second_doses.size() < days) throw DynamicsError("dose schedule shorter than horizon");
  if (!initial.valid()) throw DynamicsError("negative compartment in initial state");
  SirTrajectory traj;
  traj.population = n;
  traj.states.reserve(days + 1);
  traj.nu.reserve(days);
  traj.vaccinated.reserve(days);
  traj.states.push_back(initial);
  double confirmed = schedule.confirmed_cumulative;
  double doses_given = 0.0;
  for (std::size_t d = 0; d < days; ++d) {
    const auto day = static_cast<std::ptrdiff_t>(d);
    const SirState cur = traj.states.back();
    detail::check_step_args(cur, contacts.beta[d], gamma, day);
    const double doses = schedule.second_doses[d];
    if (!(doses >= 0.0)) throw DynamicsError("negative dose count", day);
    double infections = 0.0;
    SirState next = detail::step_unchecked(cur, contacts.beta[d], gamma, n, infections);
    const double new_infections = cur.s - next.s;
    double immunized = 0.0;
    if (doses > 0.0) {
      const double pool = n - confirmed - doses_given;
      if (doses - pool > 1e-12 * n) throw DynamicsError("dose schedule exceeds the eligible pool", day);
      if (pool > 0.0) immunized = std::min(doses * cur.s / pool, next.s);
    }
    next.s -= immunized;
    next.r += immunized;
    if (!next.valid()) throw DynamicsError("step produced a negative compartment", day);
    doses_given += doses;
    confirmed += schedule.confirmed_fraction * new_infections;
    traj.nu.push_back(new_infections);
    traj.vaccinated.push_back(immunized);
    traj.states.push_back(next);
  }
  return traj;
}

// Inverts the susceptible recursion for beta. Days where the previous I or S
// is zero get NaN.
inline std::vector<double> effective_beta(const SirTrajectory& traj) {
  if (traj.states.size() < 2) throw DynamicsError("effective contact rate needs at least two states");
  std::vector<double> out;
  out.reserve(traj.states.size() - 1);
  for (std::size_t t = 1; t < traj.states.size(); ++t) {
    const SirState& prev = traj.states[t - 1];
    if (prev.i <= 0.0 || prev.s <= 0.0) {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double infections = traj.nu.size() >= t ? traj.nu[t - 1] : prev.s - traj.states[t].s;
    out.push_back(traj.population * infections / (prev.i * prev.s));
  }
  return out;
}

inline bool is_undefined(double v) noexcept { return std::isnan(v); }

}  // namespace sirbayes

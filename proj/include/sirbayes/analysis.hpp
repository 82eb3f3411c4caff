#pragma once

// Posterior summaries, multi-region aggregation, vaccination projection, and
// their table, JSON and SVG exports.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirbayes/data_io.hpp"
#include "sirbayes/diagnostics.hpp"
#include "sirbayes/model.hpp"
#include "sirbayes/sampler.hpp"

namespace sirbayes {

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

// Reported quantile levels: the central 95% and interquartile bands and the median.
inline const std::vector<double>& band_levels() {
  static const std::vector<double> levels{0.025, 0.25, 0.5, 0.75, 0.975};
  return levels;
}

struct Interval {
  double median = kUndefined;
  double lo = kUndefined;  // 2.5%
  double hi = kUndefined;  // 97.5%
};

inline Interval interval_of(std::vector<double> sample) {
  std::sort(sample.begin(), sample.end());
  return {quantile_sorted(sample, 0.5), quantile_sorted(sample, 0.025), quantile_sorted(sample, 0.975)};
}

// values[k][t] is the band_levels()[k] quantile on day t. Days where every draw
// is undefined stay undefined.
struct QuantileBands {
  std::vector<std::vector<double>> values;

  std::size_t days() const noexcept { return values.empty() ? 0 : values.front().size(); }
  const std::vector<double>& at_level(double level) const {
    const auto& lv = band_levels();
    for (std::size_t k = 0; k < lv.size(); ++k)
      if (lv[k] == level) return values[k];
    throw std::out_of_range("no band at level " + std::to_string(level));
  }
  const std::vector<double>& median() const { return at_level(0.5); }
};

// per_draw[i][t] -> pointwise type-7 quantiles, ignoring undefined entries.
inline QuantileBands bands_of(const std::vector<std::vector<double>>& per_draw) {
  QuantileBands b;
  const auto& lv = band_levels();
  const std::size_t days = per_draw.empty() ? 0 : per_draw.front().size();
  b.values.assign(lv.size(), std::vector<double>(days, kUndefined));
  std::vector<double> col;
  for (std::size_t t = 0; t < days; ++t) {
    col.clear();
    for (const auto& d : per_draw)
      if (!std::isnan(d.at(t))) col.push_back(d[t]);
    if (col.empty()) continue;
    std::sort(col.begin(), col.end());
    for (std::size_t k = 0; k < lv.size(); ++k) b.values[k][t] = quantile_sorted(col, lv[k]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Per-draw trajectories.

struct TrajectoryDraw {
  SirTrajectory traj;
  std::vector<double> r_t;  // contact rate over removal rate, per day
  double ifr = kUndefined;
  double gamma = kUndefined;  // terminal removal rate
};

struct TrajectorySet {
  std::string region;
  Day first_day{};
  double population = 0.0;
  std::vector<double> cases;  // confirmed cases per day
  std::vector<TrajectoryDraw> draws;

  std::size_t days() const noexcept { return cases.size(); }
};

// Simulates every posterior draw. Rows follow the (chain, draw) order of `draws`.
inline TrajectorySet trajectory_set(const PosteriorDraws& draws, const RegionDataset& data) {
  if (draws.size() == 0) throw std::invalid_argument("no posterior draws to summarize");
  if (draws.dimension() != unconstrained_dimension(data.days()))
    throw std::invalid_argument("draw width does not match the dataset horizon");
  TrajectorySet set;
  set.region = data.region_code;
  set.first_day = data.first_day;
  set.population = data.population;
  set.cases = data.cases;
  set.draws.reserve(draws.size());
  for (std::size_t r = 0; r < draws.size(); ++r) {
    const ParameterVector p = ParameterVector::unflatten(draws.row(r));
    TrajectoryDraw d;
    d.traj = trajectory_of(p, data.population);
    d.r_t.resize(p.horizon());
    for (std::size_t t = 0; t < p.horizon(); ++t) d.r_t[t] = p.beta[t] / p.gamma;
    d.ifr = p.ifr;
    d.gamma = p.gamma;
    set.draws.push_back(std::move(d));
  }
  return set;
}

// (I + R) at the end of each day over confirmed cases through that day;
// undefined before the first positive case.
inline std::vector<double> undercount_of(const SirTrajectory& traj, const std::vector<double>& cases) {
  std::vector<double> out(traj.days(), kUndefined);
  double cum = 0.0;
  for (std::size_t t = 0; t < traj.days(); ++t) {
    cum += t < cases.size() ? cases[t] : 0.0;
    if (cum > 0.0) out[t] = cumulative_incidence(traj.states[t + 1]) / cum;
  }
  return out;
}

struct RegionSummary {
  std::string region;
  Day first_day{};
  double population = 0.0;
  std::size_t draws = 0;
  Interval ifr;
  QuantileBands cumulative_incidence;  // (I + R) / N at the end of each day
  QuantileBands daily_infections;
  QuantileBands r_t;
  QuantileBands undercount;

  std::size_t days() const noexcept { return daily_infections.days(); }
};

inline RegionSummary summarize(const TrajectorySet& set) {
  if (set.draws.empty()) throw std::invalid_argument("no trajectories to summarize");
  RegionSummary s;
  s.region = set.region;
  s.first_day = set.first_day;
  s.population = set.population;
  s.draws = set.draws.size();
  std::vector<std::vector<double>> inc, nu, rt, uc;
  std::vector<double> ifr;
  for (const auto& d : set.draws) {
    std::vector<double> ci(d.traj.days());
    for (std::size_t t = 0; t < ci.size(); ++t) ci[t] = cumulative_incidence(d.traj.states[t + 1]) / set.population;
    inc.push_back(std::move(ci));
    nu.push_back(d.traj.nu);
    rt.push_back(d.r_t);
    uc.push_back(undercount_of(d.traj, set.cases));
    ifr.push_back(d.ifr);
  }
  s.ifr = interval_of(ifr);
  s.cumulative_incidence = bands_of(inc);
  s.daily_infections = bands_of(nu);
  s.r_t = bands_of(rt);
  s.undercount = bands_of(uc);
  return s;
}

inline RegionSummary summarize(const PosteriorDraws& draws, const RegionDataset& data) {
  return summarize(trajectory_set(draws, data));
}

// ---------------------------------------------------------------------------
// Aggregation.

// Per-draw sums of (S, I, R) across regions. Regions are subsampled evenly to
// the smallest draw count. The national r(t) is the effective contact rate
// over the effective removal rate (R_{t+1} - R_t) / I_t, and the national IFR
// weights each region's IFR by its cumulative infections.
inline TrajectorySet aggregate_regions(const std::vector<TrajectorySet>& regions, const std::string& name = "US") {
  if (regions.empty()) throw std::invalid_argument("no regions to aggregate");
  const Day first = regions.front().first_day;
  const std::size_t days = regions.front().days();
  std::size_t count = std::numeric_limits<std::size_t>::max();
  for (const auto& r : regions) {
    if (r.first_day != first || r.days() != days)
      throw std::invalid_argument("region " + r.region + " is not on the common date index");
    if (r.draws.empty()) throw std::invalid_argument("region " + r.region + " has no draws");
    count = std::min(count, r.draws.size());
  }
  TrajectorySet out;
  out.region = name;
  out.first_day = first;
  out.cases.assign(days, 0.0);
  for (const auto& r : regions) {
    out.population += r.population;
    for (std::size_t t = 0; t < days; ++t) out.cases[t] += r.cases[t];
  }
  out.draws.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    auto& d = out.draws[k];
    d.traj.population = out.population;
    d.traj.states.assign(days + 1, SirState{});
    d.traj.nu.assign(days, 0.0);
    double infected = 0.0, weighted_ifr = 0.0;
    for (const auto& r : regions) {
      const auto& src = r.draws[k * r.draws.size() / count];
      for (std::size_t t = 0; t <= days; ++t) {
        d.traj.states[t].s += src.traj.states[t].s;
        d.traj.states[t].i += src.traj.states[t].i;
        d.traj.states[t].r += src.traj.states[t].r;
      }
      for (std::size_t t = 0; t < days; ++t) d.traj.nu[t] += src.traj.nu[t];
      const double total = std::accumulate(src.traj.nu.begin(), src.traj.nu.end(), 0.0);
      infected += total;
      weighted_ifr += src.ifr * total;
    }
    d.ifr = infected > 0.0 ? weighted_ifr / infected : kUndefined;
    const auto beta = effective_beta(d.traj);
    d.r_t.assign(days, kUndefined);
    for (std::size_t t = 0; t < days; ++t) {
      const double i = d.traj.states[t].i;
      const double g = i > 0.0 ? (d.traj.states[t + 1].r - d.traj.states[t].r) / i : kUndefined;
      if (g > 0.0) d.r_t[t] = beta[t] / g;
      if (t + 1 == days) d.gamma = g;
    }
  }
  return out;
}

// Restricts a set to [start, start + days), which must lie inside it.
inline TrajectorySet restrict_window(const TrajectorySet& set, Day start, std::size_t days) {
  const auto off = days_between(set.first_day, start);
  if (off < 0 || static_cast<std::size_t>(off) + days > set.days())
    throw std::invalid_argument("window outside the trajectories of " + set.region);
  const auto o = static_cast<std::size_t>(off);
  TrajectorySet out;
  out.region = set.region;
  out.first_day = start;
  out.population = set.population;
  out.cases.assign(set.cases.begin() + static_cast<std::ptrdiff_t>(o), set.cases.begin() + static_cast<std::ptrdiff_t>(o + days));
  // Cases before the window are folded into its first day so undercounts keep
  // their cumulative meaning.
  if (!out.cases.empty()) out.cases[0] += std::accumulate(set.cases.begin(), set.cases.begin() + static_cast<std::ptrdiff_t>(o), 0.0);
  for (const auto& d : set.draws) {
    TrajectoryDraw w;
    w.ifr = d.ifr;
    w.gamma = d.gamma;
    w.traj.population = d.traj.population;
    w.traj.states.assign(d.traj.states.begin() + static_cast<std::ptrdiff_t>(o),
                         d.traj.states.begin() + static_cast<std::ptrdiff_t>(o + days + 1));
    w.traj.nu.assign(d.traj.nu.begin() + static_cast<std::ptrdiff_t>(o), d.traj.nu.begin() + static_cast<std::ptrdiff_t>(o + days));
    w.r_t.assign(d.r_t.begin() + static_cast<std::ptrdiff_t>(o), d.r_t.begin() + static_cast<std::ptrdiff_t>(o + days));
    out.draws.push_back(std::move(w));
  }
  return out;
}

// Expected deaths shifted back by `shift` days and divided by the IFR: the
// infection curve implied by deaths alone.
inline std::vector<double> deaths_implied_infections(const std::vector<double>& expected, double ifr, std::size_t shift) {
  std::vector<double> out(expected.size(), kUndefined);
  if (!(ifr > 0.0)) return out;
  for (std::size_t t = 0; t + shift < expected.size(); ++t) out[t] = expected[t + shift] / ifr;
  return out;
}

// ---------------------------------------------------------------------------
// Projection.

struct ProjectionScenario {
  Day start_day{};                 // first projected day
  double start_level = 0.0;        // second doses on the first projected day
  double end_level_lo = 500000.0;  // ramp end level drawn uniformly per draw
  double end_level_hi = 750000.0;
  Day ramp_end_day{};              // doses reach the end level on this day and stay there
  bool frozen_r = true;
  bool frozen_undercount = true;
  std::size_t horizon = 0;         // projected days
  double already_vaccinated = 0.0; // fully vaccinated before start_day
  std::uint64_t seed = 1;

  void validate() const {
    if (!(start_level >= 0.0 && end_level_lo >= 0.0 && end_level_hi >= end_level_lo))
      throw std::invalid_argument("dose levels must be non-negative with lo <= hi");
    if (ramp_end_day < start_day) throw std::invalid_argument("dose ramp ends before the projection starts");
    if (!frozen_r) throw std::invalid_argument("only frozen contact rates are supported");
    if (!(already_vaccinated >= 0.0)) throw std::invalid_argument("vaccinated count must be non-negative");
  }

  // Linear ramp from start_level to `end_level`, constant after ramp_end_day.
  std::vector<double> doses(double end_level) const {
    std::vector<double> out(horizon);
    const double ramp = static_cast<double>(days_between(start_day, ramp_end_day));
    for (std::size_t d = 0; d < horizon; ++d) {
      const double f = ramp > 0.0 ? std::min(1.0, static_cast<double>(d) / ramp) : 1.0;
      out[d] = start_level + f * (end_level - start_level);
    }
    return out;
  }
};

struct ProjectionResult {
  std::string region;
  Day start_day{};
  std::size_t draws = 0;
  QuantileBands new_infections;
  QuantileBands cumulative_immunity;  // N - S, people
  std::vector<double> added_infections;  // per draw, summed over the horizon
  std::vector<double> end_levels;        // sampled ramp end level per draw

  std::size_t days() const noexcept { return new_infections.days(); }
};

// One draw's continuation from its terminal state with the contact rate held
// at its final value and confirmed cases accruing at the terminal ratio of
// confirmed cases to infections.
inline SirTrajectory project_draw(const TrajectoryDraw& d, double confirmed, const std::vector<double>& doses, bool frozen_undercount) {
  const SirState terminal = d.traj.states.back();
  const std::size_t days = doses.size();
  const double r_last = d.r_t.empty() ? kUndefined : d.r_t.back();
  if (!(r_last >= 0.0) || !(d.gamma > 0.0)) throw std::invalid_argument("draw lacks a terminal contact or removal rate");
  VaccinationSchedule sched;
  sched.second_doses = doses;
  sched.confirmed_cumulative = confirmed;
  const double incidence = cumulative_incidence(terminal);
  sched.confirmed_fraction = frozen_undercount && incidence > 0.0 ? std::min(1.0, confirmed / incidence) : 0.0;
  return simulate_with_vaccination(terminal, ContactPath{std::vector<double>(days, r_last * d.gamma), 0.0}, d.gamma, sched,
                                   d.traj.population, days);
}

inline ProjectionResult project(const TrajectorySet& set, const ProjectionScenario& scenario) {
  scenario.validate();
  if (set.draws.empty()) throw std::invalid_argument("no trajectories to project");
  const Day expected_start = set.first_day + std::chrono::days{static_cast<long>(set.days())};
  if (scenario.start_day != expected_start)
    throw std::invalid_argument("projection must start the day after the fitted horizon (" + format_date(expected_start) + ")");
  ProjectionResult res;
  res.region = set.region;
  res.start_day = scenario.start_day;
  res.draws = set.draws.size();
  const double confirmed = std::accumulate(set.cases.begin(), set.cases.end(), 0.0);
  std::mt19937_64 rng(scenario.seed);
  std::uniform_real_distribution<double> level(scenario.end_level_lo, scenario.end_level_hi);
  std::vector<std::vector<double>> nu, immune;
  for (const auto& d : set.draws) {
    const double end = scenario.end_level_hi > scenario.end_level_lo ? level(rng) : scenario.end_level_lo;
    res.end_levels.push_back(end);
    const SirTrajectory traj = project_draw(d, confirmed + scenario.already_vaccinated, scenario.doses(end), scenario.frozen_undercount);
    std::vector<double> im(traj.days());
    for (std::size_t t = 0; t < im.size(); ++t) im[t] = traj.population - traj.states[t + 1].s;
    res.added_infections.push_back(std::accumulate(traj.nu.begin(), traj.nu.end(), 0.0));
    nu.push_back(traj.nu);
    immune.push_back(std::move(im));
  }
  res.new_infections = bands_of(nu);
  res.cumulative_immunity = bands_of(immune);
  return res;
}

// ---------------------------------------------------------------------------
// Exports.

// Long-format rows: region,date,quantity,quantile,value.
struct SummaryRow {
  std::string region;
  Day date;
  std::string quantity;
  double quantile = 0.0;
  double value = 0.0;

  bool operator==(const SummaryRow& o) const {
    const bool same_value = value == o.value || (std::isnan(value) && std::isnan(o.value));
    return region == o.region && date == o.date && quantity == o.quantity && quantile == o.quantile && same_value;
  }
};

inline constexpr const char* kSummaryHeader = "region,date,quantity,quantile,value";

inline void append_rows(std::vector<SummaryRow>& rows, const std::string& region, Day first, const std::string& quantity,
                        const QuantileBands& b) {
  const auto& lv = band_levels();
  for (std::size_t t = 0; t < b.days(); ++t)
    for (std::size_t k = 0; k < lv.size(); ++k)
      rows.push_back({region, first + std::chrono::days{static_cast<long>(t)}, quantity, lv[k], b.values[k][t]});
}

inline std::vector<SummaryRow> summary_rows(const RegionSummary& s) {
  std::vector<SummaryRow> rows;
  append_rows(rows, s.region, s.first_day, "daily_infections", s.daily_infections);
  append_rows(rows, s.region, s.first_day, "cumulative_incidence", s.cumulative_incidence);
  append_rows(rows, s.region, s.first_day, "r_t", s.r_t);
  append_rows(rows, s.region, s.first_day, "undercount", s.undercount);
  return rows;
}

inline std::vector<SummaryRow> projection_rows(const ProjectionResult& p) {
  std::vector<SummaryRow> rows;
  append_rows(rows, p.region, p.start_day, "new_infections", p.new_infections);
  append_rows(rows, p.region, p.start_day, "cumulative_immunity", p.cumulative_immunity);
  return rows;
}

inline std::string format_value(double v) { return std::isnan(v) ? "NA" : format_number(v); }

inline void write_rows(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows)
    out << r.region << ',' << format_date(r.date) << ',' << r.quantity << ',' << format_number(r.quantile) << ','
        << format_value(r.value) << '\n';
}

inline std::vector<SummaryRow> read_rows(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSummaryHeader) throw DataError("summary table header must be '" + std::string(kSummaryHeader) + "'", 1);
  std::vector<SummaryRow> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw DataError("expected 5 fields", row);
    SummaryRow r;
    r.region = f[0];
    r.date = parse_date_or_throw(f[1], row);
    r.quantity = f[2];
    const auto q = parse_number(f[3]);
    if (!q) throw DataError("bad quantile '" + f[3] + "'", row);
    r.quantile = *q;
    if (f[4] == "NA") {
      r.value = kUndefined;
    } else {
      const auto v = parse_number(f[4]);
      if (!v) throw DataError("bad value '" + f[4] + "'", row);
      r.value = *v;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline nlohmann::json interval_json(const Interval& i) { return {{"median", i.median}, {"lo", i.lo}, {"hi", i.hi}}; }

// Point estimates at the final day plus IFR and diagnostics.
inline nlohmann::json summary_json(const RegionSummary& s, const PosteriorDraws* draws = nullptr) {
  nlohmann::json j;
  j["region"] = s.region;
  j["first_day"] = format_date(s.first_day);
  j["days"] = s.days();
  j["draws"] = s.draws;
  j["population"] = s.population;
  j["ifr"] = interval_json(s.ifr);
  if (s.days() > 0) {
    auto last = [&](const QuantileBands& b) {
      const double v[3] = {b.median().back(), b.at_level(0.025).back(), b.at_level(0.975).back()};
      return interval_json({v[0], v[1], v[2]});
    };
    j["final_cumulative_incidence"] = last(s.cumulative_incidence);
    j["final_undercount"] = last(s.undercount);
    j["final_r_t"] = last(s.r_t);
  }
  if (draws) {
    j["diagnostics"] = {{"chains", draws->chains},
                        {"draws_per_chain", draws->per_chain},
                        {"max_r_hat", draws->max_r_hat()},
                        {"divergences", draws->divergences()},
                        {"divergence_rate", draws->divergence_rate()}};
  }
  return j;
}

inline nlohmann::json projection_json(const ProjectionResult& p) {
  nlohmann::json j;
  j["region"] = p.region;
  j["start_day"] = format_date(p.start_day);
  j["days"] = p.days();
  j["draws"] = p.draws;
  if (!p.added_infections.empty()) {
    auto s = p.added_infections;
    std::sort(s.begin(), s.end());
    j["added_infections"] = {{"median", quantile_sorted(s, 0.5)},
                             {"iqr", {quantile_sorted(s, 0.25), quantile_sorted(s, 0.75)}},
                             {"interval_95", {quantile_sorted(s, 0.025), quantile_sorted(s, 0.975)}}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Draw tables: chain,iteration,divergent followed by one column per parameter.

inline void write_draws(std::ostream& out, const PosteriorDraws& d) {
  out << "chain,iteration,divergent";
  for (const auto& n : d.names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < d.size(); ++r) {
    out << d.chain_id[r] << ',' << (r % d.per_chain) << ',' << static_cast<int>(d.divergent[r]);
    for (std::size_t c = 0; c < d.dimension(); ++c) out << ',' << format_number(d.at(r, c));
    out << '\n';
  }
}

// Reads a draw table written by write_draws; chains must be contiguous and of
// equal length. Diagnostics are recomputed.
inline PosteriorDraws read_draws(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty draw table", 1);
  auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "chain" || header[1] != "iteration" || header[2] != "divergent")
    throw DataError("draw table header must start with chain,iteration,divergent", 1);
  PosteriorDraws d;
  d.names.assign(header.begin() + 3, header.end());
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw DataError("expected " + std::to_string(header.size()) + " fields", row);
    std::vector<double> nums(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) {
      const auto v = parse_number(f[k]);
      if (!v) throw DataError("bad number '" + f[k] + "'", row);
      nums[k] = *v;
    }
    const auto chain = static_cast<std::size_t>(nums[0]);
    if (!d.chain_id.empty() && chain != d.chain_id.back() && chain != d.chain_id.back() + 1)
      throw DataError("chains must be contiguous", row);
    d.chain_id.push_back(chain);
    d.divergent.push_back(nums[2] != 0.0);
    d.max_depth_hit.push_back(0);
    d.accept_stat.push_back(kUndefined);
    d.values.insert(d.values.end(), nums.begin() + 3, nums.end());
  }
  if (d.chain_id.empty()) throw DataError("draw table has no rows", row);
  d.chains = d.chain_id.back() + 1;
  if (d.chain_id.size() % d.chains != 0) throw DataError("chains have unequal lengths", row);
  d.per_chain = d.chain_id.size() / d.chains;
  for (std::size_t r = 0; r < d.chain_id.size(); ++r)
    if (d.chain_id[r] != r / d.per_chain) throw DataError("chains have unequal lengths", r + 2);
  d.update_diagnostics();
  return d;
}

// ---------------------------------------------------------------------------
// SVG plots.

namespace detail {

struct Panel {
  std::string title;
  const QuantileBands* bands;
  double scale = 1.0;  // multiplies values, e.g. 100 for percentages
};

inline std::string svg_number(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

// Panel with shaded 95% and interquartile bands and a median line.
inline void svg_panel(std::ostream& out, const Panel& p, double x0, double y0, double w, double h, Day first) {
  const auto& b = *p.bands;
  const std::size_t n = b.days();
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const auto& row : b.values)
    for (double v : row)
      if (!std::isnan(v) && std::isfinite(v)) {
        hi = any ? std::max(hi, v * p.scale) : v * p.scale;
        lo = any ? std::min(lo, v * p.scale) : std::min(0.0, v * p.scale);
        any = true;
      }
  if (!(hi > lo)) hi = lo + 1.0;
  const double pad = 40.0;
  const double pw = w - pad - 10.0, ph = h - 50.0;
  auto X = [&](std::size_t t) { return x0 + pad + (n > 1 ? pw * static_cast<double>(t) / static_cast<double>(n - 1) : 0.0); };
  auto Y = [&](double v) { return y0 + 30.0 + ph * (1.0 - (v * p.scale - lo) / (hi - lo)); };
  out << "<g>\n<text x=\"" << svg_number(x0 + w / 2) << "\" y=\"" << svg_number(y0 + 18)
      << "\" text-anchor=\"middle\" font-size=\"14\">" << p.title << "</text>\n";
  out << "<rect x=\"" << svg_number(x0 + pad) << "\" y=\"" << svg_number(y0 + 30) << "\" width=\"" << svg_number(pw)
      << "\" height=\"" << svg_number(ph) << "\" fill=\"none\" stroke=\"#999\"/>\n";
  auto band = [&](double ql, double qh, const char* fill) {
    const auto& a = b.at_level(ql);
    const auto& c = b.at_level(qh);
    std::ostringstream pts;
    bool open = false;
    auto flush = [&]() {
      if (open) out << "<polygon points=\"" << pts.str() << "\" fill=\"" << fill << "\" stroke=\"none\"/>\n";
      pts.str("");
      open = false;
    };
    std::vector<std::size_t> run;
    for (std::size_t t = 0; t <= n; ++t) {
      if (t < n && !std::isnan(a[t]) && !std::isnan(c[t]) && std::isfinite(c[t])) {
        run.push_back(t);
        continue;
      }
      if (!run.empty()) {
        for (std::size_t k : run) pts << svg_number(X(k)) << ',' << svg_number(Y(c[k])) << ' ';
        for (auto it = run.rbegin(); it != run.rend(); ++it) pts << svg_number(X(*it)) << ',' << svg_number(Y(a[*it])) << ' ';
        open = true;
        flush();
        run.clear();
      }
    }
  };
  band(0.025, 0.975, "#c6dbef");
  band(0.25, 0.75, "#6baed6");
  std::ostringstream line;
  const auto& m = b.median();
  for (std::size_t t = 0; t < n; ++t)
    if (!std::isnan(m[t]) && std::isfinite(m[t])) line << svg_number(X(t)) << ',' << svg_number(Y(m[t])) << ' ';
  out << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"#08306b\" stroke-width=\"1.5\"/>\n";
  for (double v : {lo, (lo + hi) / 2, hi})
    out << "<text x=\"" << svg_number(x0 + pad - 4) << "\" y=\"" << svg_number(Y(v / p.scale) + 4)
        << "\" text-anchor=\"end\" font-size=\"10\">" << svg_number(v) << "</text>\n";
  if (n > 0)
    for (std::size_t t : {std::size_t{0}, n - 1})
      out << "<text x=\"" << svg_number(X(t)) << "\" y=\"" << svg_number(y0 + h - 6)
          << "\" text-anchor=\"middle\" font-size=\"10\">" << format_date(first + std::chrono::days{static_cast<long>(t)})
          << "</text>\n";
  out << "</g>\n";
}

inline void svg_document(std::ostream& out, const std::string& title, const std::vector<Panel>& panels, Day first) {
  const double w = 900, h = panels.size() > 2 ? 640 : 340;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
      << ' ' << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<title>" << title << "</title>\n";
  for (std::size_t k = 0; k < panels.size(); ++k)
    svg_panel(out, panels[k], (k % 2) * w / 2, (k / 2) * 310.0 + 10.0, w / 2, 310.0, first);
  out << "</svg>\n";
}

}  // namespace detail

// Four panels: daily new infections, cumulative incidence (%), r(t) and undercount.
inline void write_summary_svg(std::ostream& out, const RegionSummary& s) {
  detail::svg_document(out, s.region,
                       {{"New infections per day", &s.daily_infections, 1.0},
                        {"Cumulative incidence (%)", &s.cumulative_incidence, 100.0},
                        {"r(t)", &s.r_t, 1.0},
                        {"Cumulative undercount", &s.undercount, 1.0}},
                       s.first_day);
}

inline void write_projection_svg(std::ostream& out, const ProjectionResult& p) {
  detail::svg_document(out, p.region + " projection",
                       {{"New infections per day", &p.new_infections, 1.0},
                        {"Cumulative immunity (millions)", &p.cumulative_immunity, 1e-6}},
                       p.start_day);
}

}  // namespace sirbayes

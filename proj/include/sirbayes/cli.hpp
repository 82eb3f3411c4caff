#pragma once

// Command-line surface: run configuration, the fit / summarize / project /
// validate commands and their on-disk artifacts.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirbayes/analysis.hpp"
#include "sirbayes/chaining.hpp"
#include "sirbayes/data_io.hpp"
#include "sirbayes/model.hpp"
#include "sirbayes/sampler.hpp"
#include "sirbayes/validation.hpp"

namespace sirbayes::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,  // fit diagnostics or validation checks failed
  kUsage = 2,
  kConfigError = 3,
  kDataError = 4,
  kRuntimeError = 5,
};

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// JSON for priors and sampler settings.

inline json to_json(const PriorDescriptor& d) {
  json j{{"kind", to_string(d.kind)}, {"lo", d.lo}, {"hi", d.hi}};
  if (d.normal_family()) {
    j["mean"] = d.mean;
    j["sd"] = d.sd;
  }
  return j;
}

inline PriorDescriptor prior_descriptor_from_json(const json& j, const std::string& name) {
  try {
    PriorDescriptor d;
    d.kind = prior_kind_from_string(j.at("kind").get<std::string>());
    d.lo = j.at("lo").get<double>();
    d.hi = j.at("hi").get<double>();
    if (d.normal_family()) {
      d.mean = j.at("mean").get<double>();
      d.sd = j.at("sd").get<double>();
    }
    d.validate(name);
    return d;
  } catch (const std::exception& e) {
    throw ConfigError("prior '" + name + "': " + e.what());
  }
}

inline const std::vector<std::string>& prior_entry_names() {
  static const std::vector<std::string> names{"ifr", "beta1", "sigma", "infectious_period", "susceptible_fraction",
                                              "infectious_fraction", "phi", "eta"};
  return names;
}

inline json to_json(const PriorSpec& s) {
  json j = json::object();
  for (const auto& n : prior_entry_names()) j[n] = to_json(s.entry(n));
  return j;
}

// Entries absent from `j` keep the values of `base`.
inline PriorSpec prior_spec_from_json(const json& j, PriorSpec base = {}) {
  if (!j.is_object()) throw ConfigError("priors must be an object");
  const auto& names = prior_entry_names();
  for (const auto& [key, value] : j.items()) {
    if (std::find(names.begin(), names.end(), key) == names.end()) throw ConfigError("unknown prior entry '" + key + "'");
    base.entry(key) = prior_descriptor_from_json(value, key);
  }
  try {
    base.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("priors: ") + e.what());
  }
  return base;
}

inline json to_json(const SamplerConfig& c) {
  return {{"chains", c.chains},
          {"steps", c.total_steps},
          {"warmup", c.warmup_steps},
          {"target_accept", c.target_accept},
          {"max_tree_depth", c.max_tree_depth},
          {"metric", c.metric == MetricKind::dense ? "dense" : "diag"},
          {"seed", c.seed},
          {"threads", c.threads}};
}

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline SamplerConfig sampler_config_from_json(const json& j, SamplerConfig c) {
  detail::check_keys(j, "sampler", {"chains", "steps", "warmup", "target_accept", "max_tree_depth", "metric", "seed", "threads"});
  c.chains = detail::get_or(j, "chains", c.chains, "sampler");
  c.total_steps = detail::get_or(j, "steps", c.total_steps, "sampler");
  c.warmup_steps = detail::get_or(j, "warmup", c.warmup_steps, "sampler");
  c.target_accept = detail::get_or(j, "target_accept", c.target_accept, "sampler");
  c.max_tree_depth = detail::get_or(j, "max_tree_depth", c.max_tree_depth, "sampler");
  c.seed = detail::get_or(j, "seed", c.seed, "sampler");
  c.threads = detail::get_or(j, "threads", c.threads, "sampler");
  const auto metric = detail::get_or<std::string>(j, "metric", c.metric == MetricKind::dense ? "dense" : "diag", "sampler");
  if (metric != "diag" && metric != "dense") throw ConfigError("sampler.metric must be 'diag' or 'dense'");
  c.metric = metric == "dense" ? MetricKind::dense : MetricKind::diag;
  return c;
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex;
  o.width(16);
  o.fill('0');
  o << v;
  return o.str();
}

// ---------------------------------------------------------------------------
// Run configuration.

struct ValidateSettings {
  std::vector<std::string> groups{"property", "sampler", "recovery", "sbc"};
  std::size_t replications = 50;
  std::size_t negative_control_replications = 20;
  SamplerConfig sampler = [] {
    SamplerConfig c;
    c.target_accept = 0.9;
    return c;
  }();
  bool inject_gradient_bug = false;  // test fixture for the gradient check
};

struct RunConfig {
  fs::path base_dir = ".";
  std::optional<fs::path> timeseries;
  std::string surveys;  // path, "builtin", or empty for none
  std::map<std::string, double> populations;
  std::vector<std::string> regions;  // empty means every region in the file
  int lead_days = kDefaultLeadDays;
  std::optional<Day> horizon_start, horizon_end;
  std::size_t l_days = 7;
  PriorSpec priors;
  SamplerConfig sampler = [] {
    SamplerConfig c;
    c.total_steps = 20000;
    c.warmup_steps = 10000;
    return c;
  }();
  std::vector<std::string> chaining_order{"IN", "OH"};
  std::vector<std::string> chaining_params{"gamma", "phi"};
  bool national = true;
  std::string national_name = "US";
  fs::path output = "out";
  ValidateSettings validate;
  json projection;  // scenario block, optional

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

  // Canonical JSON of every setting that affects results.
  json effective() const {
    json j;
    j["timeseries"] = timeseries ? timeseries->generic_string() : "";
    j["surveys"] = surveys;
    j["populations"] = populations;
    j["regions"] = regions;
    j["horizon"] = {{"lead_days", lead_days},
                    {"start", horizon_start ? format_date(*horizon_start) : ""},
                    {"end", horizon_end ? format_date(*horizon_end) : ""}};
    j["l_days"] = l_days;
    j["priors"] = to_json(priors);
    j["sampler"] = to_json(sampler);
    j["chaining"] = {{"order", chaining_order}, {"params", chaining_params}};
    j["national"] = {{"enabled", national}, {"name", national_name}};
    return j;
  }

  std::string hash() const { return hex64(fnv1a(effective().dump())); }

  void validate_settings() const {
    try {
      sampler.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("sampler: ") + e.what());
    }
    if (l_days < kMinPeriodLength) throw ConfigError("l_days must be at least 7");
    if (lead_days < 0) throw ConfigError("horizon.lead_days must be non-negative");
    if (horizon_start && horizon_end && *horizon_end < *horizon_start) throw ConfigError("horizon end precedes its start");
    std::set<std::string> seen;
    for (const auto& r : regions)
      if (!seen.insert(r).second) throw ConfigError("region '" + r + "' listed twice");
    for (const auto& p : chaining_params) {
      try {
        (void)priors.entry(p);
      } catch (const std::exception&) {
        throw ConfigError("chaining parameter '" + p + "' is not a prior entry");
      }
    }
    for (const auto& [code, pop] : populations)
      if (!(pop > 0.0)) throw ConfigError("population of " + code + " must be positive");
    if (validate.replications < 20) throw ConfigError("validate.replications must be at least 20");
  }

  // Files the run reads must exist before any sampling starts.
  void check_files() const {
    if (!timeseries) throw ConfigError("config needs a 'timeseries' path");
    if (!fs::exists(resolve(*timeseries))) throw ConfigError("time-series file not found: " + resolve(*timeseries).string());
    if (!surveys.empty() && surveys != "builtin" && !fs::exists(resolve(surveys)))
      throw ConfigError("survey file not found: " + resolve(surveys).string());
  }
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline Day parse_config_date(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + " must be a YYYY-MM-DD string");
  const auto d = parse_date(j.get<std::string>());
  if (!d) throw ConfigError(where + ": bad date '" + j.get<std::string>() + "'");
  return *d;
}

inline RunConfig run_config_from_json(const json& j, const fs::path& base_dir = ".") {
  detail::check_keys(j, "config",
                     {"timeseries", "surveys", "populations", "regions", "horizon", "l_days", "priors", "sampler", "chaining",
                      "national", "output", "validate", "projection"});
  RunConfig c;
  c.base_dir = base_dir;
  if (j.contains("timeseries")) c.timeseries = detail::get_or<std::string>(j, "timeseries", "", "config");
  c.surveys = detail::get_or<std::string>(j, "surveys", "", "config");
  if (j.contains("populations")) {
    if (!j["populations"].is_object()) throw ConfigError("populations must be an object of region: count");
    for (const auto& [code, v] : j["populations"].items()) {
      if (!v.is_number()) throw ConfigError("population of " + code + " must be a number");
      c.populations[code] = v.get<double>();
    }
  }
  c.regions = detail::get_or(j, "regions", c.regions, "config");
  if (j.contains("horizon")) {
    const auto& h = j["horizon"];
    detail::check_keys(h, "horizon", {"lead_days", "start", "end"});
    c.lead_days = detail::get_or(h, "lead_days", c.lead_days, "horizon");
    if (h.contains("start")) c.horizon_start = parse_config_date(h["start"], "horizon.start");
    if (h.contains("end")) c.horizon_end = parse_config_date(h["end"], "horizon.end");
  }
  c.l_days = detail::get_or(j, "l_days", c.l_days, "config");
  if (j.contains("priors")) c.priors = prior_spec_from_json(j["priors"]);
  if (j.contains("sampler")) c.sampler = sampler_config_from_json(j["sampler"], c.sampler);
  if (j.contains("chaining")) {
    const auto& ch = j["chaining"];
    detail::check_keys(ch, "chaining", {"order", "params"});
    c.chaining_order = detail::get_or(ch, "order", c.chaining_order, "chaining");
    c.chaining_params = detail::get_or(ch, "params", c.chaining_params, "chaining");
  }
  if (j.contains("national")) {
    const auto& n = j["national"];
    detail::check_keys(n, "national", {"enabled", "name"});
    c.national = detail::get_or(n, "enabled", c.national, "national");
    c.national_name = detail::get_or(n, "name", c.national_name, "national");
  }
  if (j.contains("output")) c.output = c.resolve(detail::get_or<std::string>(j, "output", "out", "config"));
  if (j.contains("validate")) {
    const auto& v = j["validate"];
    detail::check_keys(v, "validate", {"groups", "replications", "negative_control_replications", "sampler", "inject_gradient_bug"});
    c.validate.groups = detail::get_or(v, "groups", c.validate.groups, "validate");
    for (const auto& g : c.validate.groups)
      if (g != "property" && g != "sampler" && g != "recovery" && g != "sbc")
        throw ConfigError("unknown validation group '" + g + "'");
    const auto reps = detail::get_or<long long>(v, "replications", 50, "validate");
    if (reps < 20) throw ConfigError("validate.replications must be at least 20, got " + std::to_string(reps));
    c.validate.replications = static_cast<std::size_t>(reps);
    c.validate.negative_control_replications =
        detail::get_or(v, "negative_control_replications", c.validate.negative_control_replications, "validate");
    if (v.contains("sampler")) c.validate.sampler = sampler_config_from_json(v["sampler"], c.validate.sampler);
    c.validate.inject_gradient_bug = detail::get_or(v, "inject_gradient_bug", false, "validate");
  }
  if (j.contains("projection")) c.projection = j["projection"];
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------
// Data preparation.

inline RegionRegistry registry_of(const RunConfig& c) {
  RegionRegistry reg = RegionRegistry::us_states();
  for (const auto& [code, pop] : c.populations) reg.add(code, pop);
  return reg;
}

// Cleaned, horizon-restricted datasets with surveys and test periods, keyed
// by region code.
inline std::map<std::string, RegionDataset> prepare_regions(const RunConfig& c) {
  c.check_files();
  const auto reg = registry_of(c);
  const auto raw = ingest_timeseries_file(c.resolve(*c.timeseries).string(), reg);
  std::vector<SurveyRecord> surveys;
  if (c.surveys == "builtin")
    surveys = builtin_surveys();
  else if (!c.surveys.empty())
    surveys = load_surveys(c.resolve(c.surveys).string());
  std::vector<std::string> codes = c.regions;
  if (codes.empty())
    for (const auto& [code, series] : raw) codes.push_back(code);
  if (codes.empty()) throw DataError("time-series file holds no regions");
  std::map<std::string, RegionDataset> out;
  for (const auto& code : codes) {
    const auto it = raw.find(code);
    if (it == raw.end()) throw DataError("region " + code + " not present in the time-series file");
    RegionDataset ds = clean(it->second, reg.population(code));
    const Day start = c.horizon_start ? *c.horizon_start : default_horizon_start(ds, c.lead_days);
    const Day end = c.horizon_end ? *c.horizon_end : ds.date_of(ds.days() - 1);
    RegionDataset r = restrict_to(ds, start, end);
    r.cleaning_log = ds.cleaning_log;
    attach_surveys(r, surveys);
    r.periods = make_periods(r, c.l_days);
    out.emplace(code, std::move(r));
  }
  return out;
}

// Chained stages first, in the configured order, then everything else.
inline std::vector<std::string> fit_order(const RunConfig& c, const std::vector<std::string>& regions) {
  std::vector<std::string> out;
  for (const auto& r : c.chaining_order)
    if (std::find(regions.begin(), regions.end(), r) != regions.end()) out.push_back(r);
  for (const auto& r : regions)
    if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
  return out;
}

inline std::uint64_t region_seed(std::uint64_t seed, const std::string& region) { return seed ^ fnv1a(region); }

// ---------------------------------------------------------------------------
// Artifacts.

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline std::string draws_text(const PosteriorDraws& d) {
  std::ostringstream o;
  write_draws(o, d);
  return o.str();
}

inline PosteriorDraws load_draws(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("missing fit artifact " + p.string());
  return read_draws(in);
}

inline void write_summary_files(const fs::path& dir, const RegionSummary& s, const PosteriorDraws* draws) {
  std::ostringstream rows, svg;
  write_rows(rows, summary_rows(s));
  write_text(dir / "summary.csv", rows.str());
  write_json(dir / "summary.json", summary_json(s, draws));
  write_summary_svg(svg, s);
  write_text(dir / "plot.svg", svg.str());
}

// National aggregate over the window shared by every region.
inline std::optional<TrajectorySet> national_set(const std::vector<TrajectorySet>& sets, const std::string& name) {
  if (sets.size() < 2) return std::nullopt;
  Day start = sets.front().first_day;
  Day end = start + std::chrono::days{static_cast<long>(sets.front().days()) - 1};
  for (const auto& s : sets) {
    start = std::max(start, s.first_day);
    end = std::min(end, s.first_day + std::chrono::days{static_cast<long>(s.days()) - 1});
  }
  if (end < start) throw DataError("regions share no common window for the national aggregate");
  const auto days = static_cast<std::size_t>(days_between(start, end) + 1);
  std::vector<TrajectorySet> windowed;
  for (const auto& s : sets) windowed.push_back(restrict_window(s, start, days));
  return aggregate_regions(windowed, name);
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// Reads each region's draws and rewrites its summaries plus the national
// aggregate. Returns the trajectory sets that were summarized.
inline std::vector<TrajectorySet> summarize_outputs(const RunConfig& c, const std::map<std::string, RegionDataset>& data,
                                                    const std::set<std::string>& skip, Streams io) {
  std::vector<TrajectorySet> sets;
  for (const auto& [code, ds] : data) {
    if (skip.count(code)) continue;
    const auto draws = load_draws(c.output / code / "draws.csv");
    sets.push_back(trajectory_set(draws, ds));
    write_summary_files(c.output / code, summarize(sets.back()), &draws);
  }
  if (c.national) {
    if (const auto nat = national_set(sets, c.national_name)) {
      write_summary_files(c.output / c.national_name, summarize(*nat), nullptr);
      io.out << "national aggregate " << c.national_name << " over " << nat->days() << " common days\n";
    }
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Commands.

inline int cmd_fit(const RunConfig& c, Streams io) {
  c.validate_settings();
  const auto data = prepare_regions(c);
  std::vector<std::string> regions;
  for (const auto& [code, ds] : data) regions.push_back(code);
  const auto order = fit_order(c, regions);

  struct Outcome {
    PosteriorDraws draws;
    PriorSpec prior;
    std::string error;
  };
  std::map<std::string, Outcome> outcomes;
  PriorSpec current = c.priors;
  auto fit_one = [&](const std::string& code, const PriorSpec& prior, std::size_t threads) {
    Outcome o;
    o.prior = prior;
    try {
      SamplerConfig sc = c.sampler;
      sc.seed = region_seed(c.sampler.seed, code);
      if (threads) sc.threads = threads;
      const SirPosterior post(to_observations(data.at(code)), prior);
      o.draws = sample(post, sc);
    } catch (const std::exception& e) {
      o.error = e.what();
    }
    return o;
  };

  // Chained stages run one after another; each converged posterior becomes
  // the prior for every later region.
  std::size_t k = 0;
  for (; k < order.size(); ++k) {
    const auto& code = order[k];
    if (std::find(c.chaining_order.begin(), c.chaining_order.end(), code) == c.chaining_order.end()) break;
    io.err << "fitting " << code << " (chained stage)\n";
    Outcome o = fit_one(code, current, 0);
    if (o.error.empty() && !c.chaining_params.empty()) {
      try {
        current = chain_priors(o.draws, c.chaining_params, current, data.at(code).population);
      } catch (const std::exception& e) {
        o.error = std::string("posterior not usable as the next prior: ") + e.what();
      }
    }
    outcomes[code] = std::move(o);
  }
  // The remaining regions share one prior and fit concurrently, each on one
  // thread when several are in flight.
  const std::vector<std::string> rest(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::vector<Outcome> rest_out(rest.size());
  const std::size_t workers = sirbayes::detail::worker_count(c.sampler.threads, rest.size());
  for (const auto& code : rest) io.err << "fitting " << code << "\n";
  sirbayes::detail::parallel_for(rest.size(), workers,
                                 [&](std::size_t i) { rest_out[i] = fit_one(rest[i], current, workers > 1 ? 1 : 0); });
  for (std::size_t i = 0; i < rest.size(); ++i) outcomes[rest[i]] = std::move(rest_out[i]);

  json manifest;
  manifest["seed"] = c.sampler.seed;
  manifest["config_hash"] = c.hash();
  manifest["config"] = c.effective();
  manifest["fit_order"] = order;
  std::set<std::string> failed_fit;
  bool all_converged = true;
  for (const auto& code : order) {
    const auto& o = outcomes.at(code);
    const fs::path dir = c.output / code;
    write_text(dir / "cleaning_log.csv", "date,field,before,after\n" + format_cleaning_log(data.at(code).cleaning_log));
    write_json(dir / "prior.json", to_json(o.prior));
    json entry{{"seed", region_seed(c.sampler.seed, code)}, {"days", data.at(code).days()},
               {"first_day", format_date(data.at(code).first_day)}};
    if (o.draws.size() == 0) {
      failed_fit.insert(code);
      all_converged = false;
      entry["status"] = "failed";
      entry["error"] = o.error;
    } else {
      write_text(dir / "draws.csv", draws_text(o.draws));
      const bool converged = o.draws.max_r_hat() < 1.1;
      all_converged = all_converged && converged && o.error.empty();
      entry["status"] = !converged ? "not converged" : o.error.empty() ? "ok" : "chaining failed";
      if (!o.error.empty()) entry["error"] = o.error;
      entry["diagnostics"] = {{"max_r_hat", o.draws.max_r_hat()},
                              {"divergences", o.draws.divergences()},
                              {"divergence_rate", o.draws.divergence_rate()},
                              {"draws", o.draws.size()}};
    }
    manifest["regions"][code] = entry;
  }
  write_json(c.output / "manifest.json", manifest);
  summarize_outputs(c, data, failed_fit, io);

  for (const auto& code : order) {
    const auto& e = manifest["regions"][code];
    io.out << code << ": " << e["status"].get<std::string>();
    if (e.contains("diagnostics"))
      io.out << ", max R-hat " << e["diagnostics"]["max_r_hat"].get<double>() << ", divergences "
             << e["diagnostics"]["divergences"].get<std::size_t>();
    io.out << "\n";
    if (e.contains("error")) io.err << code << ": " << e["error"].get<std::string>() << "\n";
  }
  return all_converged ? kOk : kCheckFailed;
}

inline int cmd_summarize(const RunConfig& c, Streams io) {
  c.validate_settings();
  const auto data = prepare_regions(c);
  const auto sets = summarize_outputs(c, data, {}, io);
  io.out << "summarized " << sets.size() << " region(s)\n";
  return kOk;
}

inline ProjectionScenario scenario_from_json(const json& j, Day default_start) {
  detail::check_keys(j, "projection",
                     {"target", "start", "start_level", "end_level_lo", "end_level_hi", "ramp_end", "end", "horizon_days",
                      "already_vaccinated", "frozen_undercount", "seed"});
  ProjectionScenario s;
  s.start_day = j.contains("start") ? parse_config_date(j["start"], "projection.start") : default_start;
  s.start_level = detail::get_or(j, "start_level", s.start_level, "projection");
  s.end_level_lo = detail::get_or(j, "end_level_lo", s.end_level_lo, "projection");
  s.end_level_hi = detail::get_or(j, "end_level_hi", s.end_level_hi, "projection");
  s.ramp_end_day = j.contains("ramp_end") ? parse_config_date(j["ramp_end"], "projection.ramp_end") : s.start_day;
  if (j.contains("end") && j.contains("horizon_days")) throw ConfigError("projection takes 'end' or 'horizon_days', not both");
  if (j.contains("end")) {
    const auto span = days_between(s.start_day, parse_config_date(j["end"], "projection.end")) + 1;
    if (span < 0) throw ConfigError("projection end precedes its start");
    s.horizon = static_cast<std::size_t>(span);
  } else {
    const auto h = detail::get_or<long long>(j, "horizon_days", 0, "projection");
    if (h < 0) throw ConfigError("projection.horizon_days must be non-negative");
    s.horizon = static_cast<std::size_t>(h);
  }
  s.already_vaccinated = detail::get_or(j, "already_vaccinated", s.already_vaccinated, "projection");
  s.frozen_undercount = detail::get_or(j, "frozen_undercount", s.frozen_undercount, "projection");
  s.seed = detail::get_or(j, "seed", s.seed, "projection");
  try {
    s.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("projection: ") + e.what());
  }
  return s;
}

inline int cmd_project(const RunConfig& c, const json& scenario, Streams io) {
  c.validate_settings();
  if (scenario.is_null()) throw ConfigError("project needs a scenario (--scenario or a 'projection' block)");
  const auto data = prepare_regions(c);
  std::vector<TrajectorySet> sets;
  for (const auto& [code, ds] : data) sets.push_back(trajectory_set(load_draws(c.output / code / "draws.csv"), ds));
  std::string target = detail::get_or<std::string>(scenario, "target", "", "projection");
  std::optional<TrajectorySet> chosen;
  if (target.empty()) target = sets.size() > 1 && c.national ? c.national_name : sets.front().region;
  if (target == c.national_name && c.national && sets.size() > 1) {
    chosen = national_set(sets, c.national_name);
  } else {
    for (auto& s : sets)
      if (s.region == target) chosen = std::move(s);
  }
  if (!chosen) throw ConfigError("projection target '" + target + "' is not a fitted region");
  const Day next = chosen->first_day + std::chrono::days{static_cast<long>(chosen->days())};
  const ProjectionScenario sc = scenario_from_json(scenario, next);
  const ProjectionResult res = project(*chosen, sc);
  const fs::path dir = c.output / target;
  std::ostringstream rows, svg;
  write_rows(rows, projection_rows(res));
  write_text(dir / "projection.csv", rows.str());
  write_json(dir / "projection.json", projection_json(res));
  write_projection_svg(svg, res);
  write_text(dir / "projection.svg", svg.str());
  io.out << "projected " << target << " for " << res.days() << " day(s) from " << format_date(res.start_day) << "\n";
  return kOk;
}

inline int cmd_validate(const RunConfig& c, Streams io) {
  if (c.validate.replications < 20) throw ConfigError("validate.replications must be at least 20");
  const auto& g = c.validate.groups;
  auto wants = [&](const char* name) { return std::find(g.begin(), g.end(), name) != g.end(); };
  std::vector<CheckResult> results;
  auto run = [&](std::vector<CheckResult> part) {
    for (const auto& r : part) {
      io.out << (r.passed ? "PASS " : "FAIL ") << r.group << ": " << r.name << " (" << r.detail << ")\n";
      results.push_back(r);
    }
  };
  if (wants("property")) run(property_checks(c.validate.inject_gradient_bug));
  if (wants("sampler")) run(sampler_checks());
  if (wants("recovery")) run(recovery_checks(c.validate.sampler));
  if (wants("sbc")) {
    SbcCheckOptions o;
    o.replications = c.validate.replications;
    o.negative_control_replications = c.validate.negative_control_replications;
    o.progress = [&](const std::string& run_name, std::size_t k, double s) {
      io.err << run_name << " replication " << k + 1 << " done in " << s << " s\n";
    };
    run(sbc_checks(c.validate.sampler, o));
  }
  json report;
  report["checks"] = json::array();
  bool ok = true;
  for (const auto& r : results) {
    report["checks"].push_back(to_json(r));
    ok = ok && (r.passed || r.skipped);
  }
  report["passed"] = ok;
  write_json(c.output / "validation.json", report);
  return ok ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------
// Entry point.

struct Overrides {
  std::string config;
  std::string regions;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> chains, steps, warmup, l_days;
  std::string scenario;
};

inline void apply(RunConfig& c, const Overrides& o) {
  if (!o.regions.empty()) c.regions = split_list(o.regions);
  if (o.seed) c.sampler.seed = c.validate.sampler.seed = *o.seed;
  if (!o.out.empty()) c.output = o.out;
  if (o.chains) c.sampler.chains = *o.chains;
  if (o.steps) c.sampler.total_steps = *o.steps;
  if (o.warmup) c.sampler.warmup_steps = *o.warmup;
  if (o.l_days) c.l_days = *o.l_days;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bayesian SIR inference from deaths, cases, tests and surveys"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config, "run configuration (JSON)");
  app.add_option("--regions", o.regions, "comma-separated region codes");
  app.add_option("--seed", o.seed, "sampler seed");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--chains", o.chains, "number of chains");
  app.add_option("--steps", o.steps, "total steps per chain, warmup included");
  app.add_option("--warmup", o.warmup, "warmup steps per chain");
  app.add_option("--l-days", o.l_days, "test aggregation period in days");
  auto* fit = app.add_subcommand("fit", "fit every configured region");
  auto* summarize_cmd = app.add_subcommand("summarize", "rebuild summaries from saved draws");
  auto* project_cmd = app.add_subcommand("project", "project saved fits forward under a vaccination scenario");
  project_cmd->add_option("--scenario", o.scenario, "scenario file (JSON); defaults to the config's projection block");
  auto* validate_cmd = app.add_subcommand("validate", "run the self-check suite");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  Streams io{out, err};
  try {
    RunConfig c;
    if (!o.config.empty())
      c = load_run_config(o.config);
    else if (!validate_cmd->parsed())
      throw ConfigError("--config is required for this command");
    apply(c, o);
    if (fit->parsed()) return cmd_fit(c, io);
    if (summarize_cmd->parsed()) return cmd_summarize(c, io);
    if (project_cmd->parsed()) {
      json scenario = c.projection;
      if (!o.scenario.empty()) {
        std::ifstream in(o.scenario);
        if (!in) throw ConfigError("cannot open scenario file " + o.scenario);
        try {
          in >> scenario;
        } catch (const json::exception& e) {
          throw ConfigError("scenario file " + o.scenario + ": " + e.what());
        }
      }
      return cmd_project(c, scenario, io);
    }
    return cmd_validate(c, io);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace sirbayes::cli

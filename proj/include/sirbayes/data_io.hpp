#pragma once

// Ingestion, cleaning and aggregation of daily state time series and survey
// metadata into model-ready observation sets.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirbayes/model.hpp"
#include "sirbayes/observation.hpp"

namespace sirbayes {

using Day = std::chrono::sys_days;

class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& what, std::size_t row = 0)
      : std::runtime_error(row ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

private:
  std::size_t row_;
};

// ---------------------------------------------------------------------------
// Dates and numbers at the text boundary.

// Accepts ISO-8601 (YYYY-MM-DD) and the compact YYYYMMDD form.
inline std::optional<Day> parse_date(std::string_view s) {
  auto digits = [](std::string_view v) {
    return !v.empty() && std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  std::string_view y, m, d;
  if (s.size() == 10 && s[4] == '-' && s[7] == '-') {
    y = s.substr(0, 4), m = s.substr(5, 2), d = s.substr(8, 2);
  } else if (s.size() == 8) {
    y = s.substr(0, 4), m = s.substr(4, 2), d = s.substr(6, 2);
  } else {
    return std::nullopt;
  }
  if (!digits(y) || !digits(m) || !digits(d)) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{std::stoi(std::string(y))},
                                        std::chrono::month{static_cast<unsigned>(std::stoi(std::string(m)))},
                                        std::chrono::day{static_cast<unsigned>(std::stoi(std::string(d)))}};
  if (!ymd.ok()) return std::nullopt;
  return Day{ymd};
}

inline Day parse_date_or_throw(std::string_view s, std::size_t row = 0) {
  const auto d = parse_date(s);
  if (!d) throw DataError("unparseable date '" + std::string(s) + "'", row);
  return *d;
}

inline std::string format_date(Day day) {
  const std::chrono::year_month_day ymd{day};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::ptrdiff_t days_between(Day from, Day to) { return (to - from).count(); }

// Shortest text that parses back to the same double.
inline std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  return v;
}

// Splits one CSV record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------
// Regions.

class RegionRegistry {
public:
  void add(const std::string& code, double population) {
    if (code.empty()) throw std::invalid_argument("region code must be non-empty");
    if (!(population > 0.0)) throw std::invalid_argument("population of " + code + " must be positive");
    populations_[code] = population;
  }
  bool contains(const std::string& code) const { return populations_.count(code) > 0; }
  double population(const std::string& code) const {
    const auto it = populations_.find(code);
    if (it == populations_.end()) throw DataError("unknown region code '" + code + "'");
    return it->second;
  }
  std::vector<std::string> codes() const {
    std::vector<std::string> out;
    for (const auto& [code, pop] : populations_) out.push_back(code);
    return out;
  }

  // The 50 states and DC with July 2019 resident population estimates.
  static RegionRegistry us_states() {
    static const std::pair<const char*, double> table[] = {
        {"AL", 4903185},  {"AK", 731545},   {"AZ", 7278717},  {"AR", 3017804},  {"CA", 39512223}, {"CO", 5758736},
        {"CT", 3565287},  {"DE", 973764},   {"DC", 705749},   {"FL", 21477737}, {"GA", 10617423}, {"HI", 1415872},
        {"ID", 1787065},  {"IL", 12671821}, {"IN", 6732219},  {"IA", 3155070},  {"KS", 2913314},  {"KY", 4467673},
        {"LA", 4648794},  {"ME", 1344212},  {"MD", 6045680},  {"MA", 6892503},  {"MI", 9986857},  {"MN", 5639632},
        {"MS", 2976149},  {"MO", 6137428},  {"MT", 1068778},  {"NE", 1934408},  {"NV", 3080156},  {"NH", 1359711},
        {"NJ", 8882190},  {"NM", 2096829},  {"NY", 19453561}, {"NC", 10488084}, {"ND", 762062},   {"OH", 11689100},
        {"OK", 3956971},  {"OR", 4217737},  {"PA", 12801989}, {"RI", 1059361},  {"SC", 5148714},  {"SD", 884659},
        {"TN", 6829174},  {"TX", 28995881}, {"UT", 3205958},  {"VT", 623989},   {"VA", 8535519},  {"WA", 7614893},
        {"WV", 1792147},  {"WI", 5822434},  {"WY", 578759}};
    RegionRegistry r;
    for (const auto& [code, pop] : table) r.add(code, pop);
    return r;
  }

private:
  std::map<std::string, double> populations_;
};

// ---------------------------------------------------------------------------
// Raw ingestion.

struct CleaningEntry {
  Day date;
  std::string field;
  double before = 0.0;
  double after = 0.0;
};

struct RawSeries {
  std::string region;
  Day first_day{};
  std::vector<double> deaths, cases, tests;  // daily increments, possibly negative
  std::vector<Day> gap_days;                  // dates absent from the file, filled with zeros

  std::size_t days() const noexcept { return deaths.size(); }
};

enum class TimeSeriesSchema { daily, legacy_cumulative };

namespace detail {

struct Columns {
  TimeSeriesSchema schema;
  std::size_t date, region, deaths, cases, tests;
};

inline Columns detect_columns(const std::vector<std::string>& header) {
  auto find = [&](const char* name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  auto require = [&](std::initializer_list<const char*> names, TimeSeriesSchema schema) -> std::optional<Columns> {
    std::vector<std::size_t> idx;
    for (const char* n : names) {
      const auto i = find(n);
      if (!i) return std::nullopt;
      idx.push_back(*i);
    }
    return Columns{schema, idx[0], idx[1], idx[2], idx[3], idx[4]};
  };
  if (auto c = require({"date", "region", "deaths_daily", "cases_daily", "tests_daily"}, TimeSeriesSchema::daily)) return *c;
  if (auto c = require({"date", "state", "death", "positive", "totalTestResults"}, TimeSeriesSchema::legacy_cumulative))
    return *c;
  throw DataError("header matches neither 'date,region,deaths_daily,cases_daily,tests_daily' nor the legacy "
                  "'date,state,death,positive,totalTestResults' schema",
                  1);
}

struct Record {
  Day date;
  std::optional<double> deaths, cases, tests;
};

}  // namespace detail

// Reads every region in the file. Daily rows with empty counts read as zero;
// legacy cumulative rows with empty counts carry the previous total forward.
inline std::map<std::string, RawSeries> ingest_timeseries(std::istream& in, const RegionRegistry& registry) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty time-series file");
  const detail::Columns cols = detail::detect_columns(split_csv_line(line));
  const std::size_t width = std::max({cols.date, cols.region, cols.deaths, cols.cases, cols.tests}) + 1;

  std::map<std::string, std::map<Day, detail::Record>> by_region;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() < width) throw DataError("expected at least " + std::to_string(width) + " fields", row);
    detail::Record rec{parse_date_or_throw(f[cols.date], row), {}, {}, {}};
    const std::string& region = f[cols.region];
    if (!registry.contains(region)) throw DataError("unknown region code '" + region + "'", row);
    try {
      rec.deaths = parse_number(f[cols.deaths]);
      rec.cases = parse_number(f[cols.cases]);
      rec.tests = parse_number(f[cols.tests]);
    } catch (const std::invalid_argument& e) {
      throw DataError(e.what(), row);
    }
    auto& series = by_region[region];
    if (!series.emplace(rec.date, rec).second)
      throw DataError("duplicate date " + format_date(rec.date) + " for region " + region, row);
  }

  std::map<std::string, RawSeries> out;
  for (const auto& [region, records] : by_region) {
    RawSeries s;
    s.region = region;
    s.first_day = records.begin()->first;
    const Day last = records.rbegin()->first;
    double prev[3] = {0.0, 0.0, 0.0};
    for (Day d = s.first_day; d <= last; d += std::chrono::days{1}) {
      const auto it = records.find(d);
      if (it == records.end()) {
        s.gap_days.push_back(d);
        s.deaths.push_back(0.0);
        s.cases.push_back(0.0);
        s.tests.push_back(0.0);
        continue;
      }
      const std::optional<double>* vals[3] = {&it->second.deaths, &it->second.cases, &it->second.tests};
      std::vector<double>* dest[3] = {&s.deaths, &s.cases, &s.tests};
      for (int k = 0; k < 3; ++k) {
        if (cols.schema == TimeSeriesSchema::daily) {
          dest[k]->push_back(vals[k]->value_or(0.0));
        } else {
          const double cum = vals[k]->value_or(prev[k]);
          dest[k]->push_back(cum - prev[k]);
          prev[k] = cum;
        }
      }
    }
    out.emplace(region, std::move(s));
  }
  return out;
}

inline std::map<std::string, RawSeries> ingest_timeseries_file(const std::string& path, const RegionRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open time-series file " + path);
  return ingest_timeseries(in, registry);
}

// ---------------------------------------------------------------------------
// Cleaning.

struct RegionDataset {
  std::string region_code;
  double population = 0.0;
  Day first_day{};
  std::vector<double> deaths, cases, tests;
  std::vector<SurveyObservation> surveys;
  std::vector<TestPeriod> periods;
  std::vector<CleaningEntry> cleaning_log;
  std::vector<Day> gap_days;

  std::size_t days() const noexcept { return deaths.size(); }
  Day date_of(std::size_t index) const { return first_day + std::chrono::days{static_cast<long>(index)}; }
  std::ptrdiff_t index_of(Day d) const { return days_between(first_day, d); }
};

inline constexpr double kMaxCorrectedFraction = 0.2;

namespace detail {

// Clamps negative increments to zero and subtracts the excess from earlier
// days, walking backward until it is absorbed. Returns touched day indices.
inline std::set<std::size_t> push_back_negatives(std::vector<double>& x, const std::string& field, Day first,
                                                 std::vector<CleaningEntry>& log) {
  std::set<std::size_t> touched;
  std::map<std::size_t, double> before;
  for (std::size_t t = x.size(); t-- > 0;) {
    if (x[t] >= 0.0) continue;
    before.emplace(t, x[t]);
    const double excess = -x[t];
    x[t] = 0.0;
    if (t > 0) {
      before.emplace(t - 1, x[t - 1]);
      x[t - 1] -= excess;
    }
  }
  for (const auto& [t, b] : before) {
    if (b == x[t]) continue;
    log.push_back({first + std::chrono::days{static_cast<long>(t)}, field, b, x[t]});
    touched.insert(t);
  }
  return touched;
}

}  // namespace detail

inline RegionDataset clean(const RawSeries& raw, double population) {
  if (raw.cases.size() != raw.days() || raw.tests.size() != raw.days())
    throw DataError("region " + raw.region + ": daily series have different lengths");
  if (raw.days() == 0) throw DataError("region " + raw.region + ": empty series");
  RegionDataset ds;
  ds.region_code = raw.region;
  ds.population = population;
  ds.first_day = raw.first_day;
  ds.deaths = raw.deaths;
  ds.cases = raw.cases;
  ds.tests = raw.tests;
  ds.gap_days = raw.gap_days;
  std::set<std::size_t> touched;
  for (auto [series, name] : {std::pair{&ds.deaths, "deaths"}, {&ds.cases, "cases"}, {&ds.tests, "tests"}}) {
    const auto t = detail::push_back_negatives(*series, name, ds.first_day, ds.cleaning_log);
    touched.insert(t.begin(), t.end());
  }
  std::sort(ds.cleaning_log.begin(), ds.cleaning_log.end(),
            [](const CleaningEntry& a, const CleaningEntry& b) { return a.date < b.date || (a.date == b.date && a.field < b.field); });
  if (static_cast<double>(touched.size()) > kMaxCorrectedFraction * static_cast<double>(ds.days()))
    throw DataError("region " + raw.region + ": " + std::to_string(touched.size()) + " of " +
                    std::to_string(ds.days()) + " days needed correction; data considered unusable");
  const bool any_cases = std::any_of(ds.cases.begin(), ds.cases.end(), [](double v) { return v > 0.0; });
  const bool any_tests = std::any_of(ds.tests.begin(), ds.tests.end(), [](double v) { return v > 0.0; });
  if (any_cases && !any_tests) throw DataError("region " + raw.region + ": cases reported but no tests");
  return ds;
}

inline std::string format_cleaning_log(const std::vector<CleaningEntry>& log) {
  std::ostringstream out;
  for (const auto& e : log)
    out << format_date(e.date) << ',' << e.field << ',' << format_number(e.before) << ',' << format_number(e.after) << '\n';
  return out.str();
}

// Writes datasets in the daily schema; reading the text back reproduces the
// numeric content exactly.
inline void write_timeseries(std::ostream& out, const std::vector<RegionDataset>& datasets) {
  out << "date,region,deaths_daily,cases_daily,tests_daily\n";
  for (const auto& ds : datasets)
    for (std::size_t t = 0; t < ds.days(); ++t)
      out << format_date(ds.date_of(t)) << ',' << ds.region_code << ',' << format_number(ds.deaths[t]) << ','
          << format_number(ds.cases[t]) << ',' << format_number(ds.tests[t]) << '\n';
}

// ---------------------------------------------------------------------------
// Horizon and aggregation.

// Restricts a dataset to [start, end], padding days before the data with
// zeros. Surveys and periods must be attached afterwards.
inline RegionDataset restrict_to(const RegionDataset& ds, Day start, Day end) {
  if (end < start) throw DataError("region " + ds.region_code + ": horizon end precedes its start");
  RegionDataset out = ds;
  out.first_day = start;
  out.surveys.clear();
  out.periods.clear();
  const auto len = static_cast<std::size_t>(days_between(start, end) + 1);
  for (auto [dst, src] : {std::pair{&out.deaths, &ds.deaths}, {&out.cases, &ds.cases}, {&out.tests, &ds.tests}}) {
    dst->assign(len, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      const std::ptrdiff_t k = ds.index_of(start) + static_cast<std::ptrdiff_t>(t);
      if (k >= 0 && k < static_cast<std::ptrdiff_t>(src->size())) (*dst)[t] = (*src)[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

inline constexpr int kDefaultLeadDays = 30;

// Default model start: the first reported death minus `lead_days`.
inline Day default_horizon_start(const RegionDataset& ds, int lead_days = kDefaultLeadDays) {
  const auto it = std::find_if(ds.deaths.begin(), ds.deaths.end(), [](double v) { return v > 0.0; });
  if (it == ds.deaths.end()) throw DataError("region " + ds.region_code + ": no reported deaths to anchor the horizon");
  return ds.date_of(static_cast<std::size_t>(it - ds.deaths.begin())) - std::chrono::days{lead_days};
}

inline constexpr std::size_t kMinPeriodLength = 7;

// Complete consecutive l-day periods starting on the first day with nonzero
// cumulative tests; a trailing partial period is dropped.
inline std::vector<TestPeriod> make_periods(const RegionDataset& ds, std::size_t l) {
  if (l < kMinPeriodLength) throw std::invalid_argument("period length must be at least 7 days");
  std::vector<TestPeriod> out;
  std::size_t start = 0;
  double cum_cases = 0.0, cum_tests = 0.0;
  while (start < ds.days() && cum_tests + ds.tests[start] <= 0.0) {
    cum_cases += ds.cases[start];
    ++start;
  }
  for (; start + l <= ds.days(); start += l) {
    TestPeriod p{start, start + l - 1, 0.0, 0.0, 0.0, 0.0};
    for (std::size_t t = start; t <= p.end_day; ++t) {
      p.cases += ds.cases[t];
      p.tests += ds.tests[t];
    }
    cum_cases += p.cases;
    cum_tests += p.tests;
    p.cum_cases_end = cum_cases;
    p.cum_tests_end = cum_tests;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Surveys.

struct SurveyRecord {
  std::string region;
  SurveyKind kind = SurveyKind::viral;
  double estimate = 0.0;
  double sample_size = 0.0;
  Day window_start{};
  Day window_end{};
};

inline std::vector<SurveyRecord> parse_surveys(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_object() && j.contains("surveys") ? j.at("surveys") : j;
  if (!list.is_array()) throw DataError("survey config must be an array or an object with a 'surveys' array");
  std::vector<SurveyRecord> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& e = list[i];
    try {
      SurveyRecord r;
      r.region = e.at("region").get<std::string>();
      r.kind = survey_kind_from_string(e.at("kind").get<std::string>());
      r.estimate = e.at("estimate").get<double>();
      r.sample_size = e.at("sample_size").get<double>();
      r.window_start = parse_date_or_throw(e.at("window_start").get<std::string>());
      r.window_end = parse_date_or_throw(e.at("window_end").get<std::string>());
      if (!(r.estimate > 0.0 && r.estimate < 1.0)) throw DataError("estimate must lie in (0, 1)");
      if (!(r.sample_size >= 1.0)) throw DataError("sample_size must be at least 1");
      if (r.window_end < r.window_start) throw DataError("window_end precedes window_start");
      out.push_back(r);
    } catch (const std::exception& ex) {
      throw DataError("survey entry " + std::to_string(i) + ": " + ex.what());
    }
  }
  return out;
}

inline std::vector<SurveyRecord> load_surveys(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open survey file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("survey file " + path + ": " + e.what());
  }
  return parse_surveys(j);
}

inline nlohmann::json surveys_to_json(const std::vector<SurveyRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records)
    arr.push_back({{"region", r.region},
                   {"kind", to_string(r.kind)},
                   {"estimate", r.estimate},
                   {"sample_size", r.sample_size},
                   {"window_start", format_date(r.window_start)},
                   {"window_end", format_date(r.window_end)}});
  return {{"surveys", arr}};
}

// Four random-sample surveys of Indiana (April 2020) and Ohio (July 2020).
inline std::vector<SurveyRecord> builtin_surveys() {
  auto d = [](const char* s) { return parse_date_or_throw(s); };
  return {{"IN", SurveyKind::viral, 0.0174, 3605, d("2020-04-25"), d("2020-04-29")},
          {"IN", SurveyKind::sero, 0.0109, 3518, d("2020-04-25"), d("2020-04-29")},
          {"OH", SurveyKind::sero, 0.013, 667, d("2020-07-09"), d("2020-07-28")},
          {"OH", SurveyKind::viral, 0.009, 727, d("2020-07-09"), d("2020-07-28")}};
}

// Surveys for this region converted to day indices; windows must lie inside.
inline void attach_surveys(RegionDataset& ds, const std::vector<SurveyRecord>& records) {
  ds.surveys.clear();
  for (const auto& r : records) {
    if (r.region != ds.region_code) continue;
    const auto a = ds.index_of(r.window_start), b = ds.index_of(r.window_end);
    if (a < 0 || b >= static_cast<std::ptrdiff_t>(ds.days()))
      throw DataError("region " + ds.region_code + ": survey window " + format_date(r.window_start) + " to " +
                      format_date(r.window_end) + " lies outside the model horizon");
    ds.surveys.push_back({r.kind, r.estimate, r.sample_size, static_cast<std::size_t>(a), static_cast<std::size_t>(b)});
  }
}

inline ObservationSet to_observations(const RegionDataset& ds) {
  ObservationSet obs;
  obs.population = ds.population;
  obs.horizon = ds.days();
  obs.death_series.push_back(ds.deaths);
  obs.surveys = ds.surveys;
  obs.periods = ds.periods;
  obs.validate();
  return obs;
}

}  // namespace sirbayes

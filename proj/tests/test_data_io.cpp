#include "sirbayes/data_io.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <random>
#include <sstream>

using namespace sirbayes;

namespace {

RegionRegistry registry() {
  RegionRegistry r = RegionRegistry::us_states();
  r.add("SYN", 1e6);
  return r;
}

std::map<std::string, RawSeries> ingest_text(const std::string& text) {
  std::istringstream in(text);
  return ingest_timeseries(in, registry());
}

RawSeries raw_series(std::vector<double> deaths, std::vector<double> cases, std::vector<double> tests) {
  RawSeries s;
  s.region = "SYN";
  s.first_day = parse_date_or_throw("2020-03-01");
  s.deaths = std::move(deaths);
  s.cases = std::move(cases);
  s.tests = std::move(tests);
  return s;
}

RegionDataset random_dataset(std::size_t days, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::poisson_distribution<int> d(3.0), c(40.0), t(900.0);
  std::vector<double> deaths(days), cases(days), tests(days);
  for (std::size_t i = 0; i < days; ++i) {
    deaths[i] = d(rng);
    cases[i] = c(rng);
    tests[i] = t(rng);
  }
  return clean(raw_series(deaths, cases, tests), 1e6);
}

}  // namespace

TEST_CASE("dates and numbers", "[data_io]") {
  CHECK(format_date(parse_date_or_throw("2020-04-25")) == "2020-04-25");
  CHECK(parse_date("20200425") == parse_date("2020-04-25"));
  CHECK_FALSE(parse_date("2020-02-30"));
  CHECK_FALSE(parse_date("04/25/2020"));
  CHECK(days_between(parse_date_or_throw("2020-12-31"), parse_date_or_throw("2021-01-06")) == 6);
  for (double v : {0.1, 1.0 / 3.0, 12345.0, 1e-300}) CHECK(*parse_number(format_number(v)) == v);
  CHECK_FALSE(parse_number(""));
  CHECK_THROWS(parse_number("12x"));
  CHECK(split_csv_line(R"(a,"b,c","d""e",)") == std::vector<std::string>{"a", "b,c", "d\"e", ""});
}

TEST_CASE("well-formed daily file", "[data_io][ingest]") {
  const auto out = ingest_text(
      "date,region,deaths_daily,cases_daily,tests_daily\n"
      "2020-03-01,IN,0,1,10\n"
      "2020-03-02,IN,1,2,20\n"
      "2020-03-03,IN,2,3,30\n");
  REQUIRE(out.size() == 1);
  const RawSeries& s = out.at("IN");
  CHECK(s.days() == 3);
  CHECK(s.deaths == std::vector<double>{0, 1, 2});
  CHECK(s.cases == std::vector<double>{1, 2, 3});
  CHECK(s.tests == std::vector<double>{10, 20, 30});
  CHECK(s.gap_days.empty());
  CHECK(format_date(s.first_day) == "2020-03-01");
}

TEST_CASE("gap days are filled with zero increments and flagged", "[data_io][ingest]") {
  const auto out = ingest_text(
      "date,region,deaths_daily,cases_daily,tests_daily\n"
      "2020-03-01,IN,1,1,10\n"
      "2020-03-04,IN,2,3,30\n");
  const RawSeries& s = out.at("IN");
  CHECK(s.deaths == std::vector<double>{1, 0, 0, 2});
  REQUIRE(s.gap_days.size() == 2);
  CHECK(format_date(s.gap_days[0]) == "2020-03-02");
}

TEST_CASE("legacy cumulative schema is differenced", "[data_io][ingest]") {
  // Columns out of order with extras, rows newest first as in the archived feed.
  const auto out = ingest_text(
      "date,state,positive,hash,death,totalTestResults\n"
      "20200303,OH,10,\"x,y\",3,100\n"
      "20200302,OH,6,z,1,\n"
      "20200301,OH,2,z,0,40\n");
  const RawSeries& s = out.at("OH");
  CHECK(s.deaths == std::vector<double>{0, 1, 2});
  CHECK(s.cases == std::vector<double>{2, 4, 4});
  CHECK(s.tests == std::vector<double>{40, 0, 60});  // empty total carries forward
}

TEST_CASE("schema and content errors carry the row", "[data_io][ingest]") {
  CHECK_THROWS_AS(ingest_text("date,region,deaths\n2020-03-01,IN,1\n"), DataError);
  try {
    ingest_text("date,region,deaths_daily,cases_daily,tests_daily\n2020-03-01,IN,0,1,10\n2020-13-01,IN,0,1,10\n");
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(e.row() == 3);
  }
  try {
    ingest_text("date,region,deaths_daily,cases_daily,tests_daily\n2020-03-01,XX,0,1,10\n");
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(e.row() == 2);
    CHECK(std::string(e.what()).find("unknown region") != std::string::npos);
  }
  CHECK_THROWS_AS(ingest_text("date,region,deaths_daily,cases_daily,tests_daily\n2020-03-01,IN,a,1,10\n"), DataError);
  CHECK_THROWS_AS(ingest_text("date,region,deaths_daily,cases_daily,tests_daily\n2020-03-01,IN,0,1,10\n2020-03-01,IN,0,1,10\n"),
                  DataError);
}

TEST_CASE("cleaning clean data is the identity", "[data_io][clean]") {
  const RawSeries raw = raw_series({0, 1, 2}, {1, 2, 3}, {10, 20, 30});
  const RegionDataset ds = clean(raw, 1e6);
  CHECK(ds.deaths == raw.deaths);
  CHECK(ds.cases == raw.cases);
  CHECK(ds.tests == raw.tests);
  CHECK(ds.cleaning_log.empty());
  CHECK(format_cleaning_log(ds.cleaning_log).empty());
}

TEST_CASE("negative revisions are clamped and pushed back", "[data_io][clean]") {
  // Oracle by hand: day 3 holds -4, so it becomes 0 and day 2 drops from 3 to -1,
  // which in turn becomes 0 and takes 1 from day 1 (5 -> 4).
  std::vector<double> cases{2, 5, 3, -4, 6, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  const RawSeries raw = raw_series(std::vector<double>(15, 0.0), cases, std::vector<double>(15, 100.0));
  const RegionDataset ds = clean(raw, 1e6);
  CHECK(ds.cases == std::vector<double>{2, 4, 0, 0, 6, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
  CHECK(std::accumulate(ds.cases.begin(), ds.cases.end(), 0.0) == std::accumulate(cases.begin(), cases.end(), 0.0));
  REQUIRE(ds.cleaning_log.size() == 3);
  CHECK(format_cleaning_log(ds.cleaning_log) ==
        "2020-03-02,cases,5,4\n"
        "2020-03-03,cases,3,0\n"
        "2020-03-04,cases,-4,0\n");

  SECTION("through ingestion of a cumulative file") {
    const auto out = ingest_text(
        "date,state,death,positive,totalTestResults\n"
        "2020-03-01,IN,0,5,50\n2020-03-02,IN,0,9,90\n2020-03-03,IN,0,7,130\n2020-03-04,IN,0,10,170\n"
        "2020-03-05,IN,0,12,200\n2020-03-06,IN,0,14,230\n2020-03-07,IN,0,16,260\n2020-03-08,IN,0,18,290\n"
        "2020-03-09,IN,0,20,320\n2020-03-10,IN,0,22,350\n2020-03-11,IN,0,24,380\n");
    const RegionDataset d = clean(out.at("IN"), 6732219);
    CHECK(d.cases == std::vector<double>{5, 2, 0, 3, 2, 2, 2, 2, 2, 2, 2});
    CHECK(d.cleaning_log.size() == 2);
  }
}

TEST_CASE("cleaning guards", "[data_io][clean]") {
  // Too many corrections: the two revisions touch five of ten days.
  std::vector<double> tests{10, 10, -5, 10, 10, 10, 10, 10, -20, 10};
  CHECK_THROWS_AS(clean(raw_series(std::vector<double>(10, 0), std::vector<double>(10, 1), tests), 1e6), DataError);
  CHECK_THROWS_AS(clean(raw_series({0, 0}, {1, 0}, {0, 0}), 1e6), DataError);
  CHECK_NOTHROW(clean(raw_series({0, 0}, {0, 0}, {0, 0}), 1e6));
}

TEST_CASE("periods", "[data_io][periods]") {
  const RegionDataset ds21 = random_dataset(21, 1);
  CHECK(make_periods(ds21, 7).size() == 3);
  const RegionDataset ds20 = random_dataset(20, 2);
  const auto p20 = make_periods(ds20, 7);
  REQUIRE(p20.size() == 2);
  CHECK(p20.back().end_day == 13);
  CHECK_THROWS(make_periods(ds21, 6));

  const RegionDataset ds = random_dataset(100, 3);
  const auto periods = make_periods(ds, 9);
  double cum_c = 0.0, cum_t = 0.0, sum_period_cases = 0.0;
  for (std::size_t k = 0; k < periods.size(); ++k) {
    const auto& p = periods[k];
    double c = 0.0, t = 0.0;
    for (std::size_t d = p.start_day; d <= p.end_day; ++d) {
      c += ds.cases[d];
      t += ds.tests[d];
    }
    CHECK(p.cases == c);
    CHECK(p.tests == t);
    CHECK(p.end_day - p.start_day + 1 == 9);
    if (k > 0) CHECK(p.start_day == periods[k - 1].end_day + 1);
    cum_c += c;
    cum_t += t;
    CHECK(p.cum_cases_end == cum_c);
    CHECK(p.cum_tests_end == cum_t);
    sum_period_cases += p.cases;
  }
  CHECK(sum_period_cases <= std::accumulate(ds.cases.begin(), ds.cases.end(), 0.0));

  // Periods begin on the first day with nonzero cumulative tests.
  auto late = raw_series(std::vector<double>(20, 0), std::vector<double>(20, 0), std::vector<double>(20, 5));
  std::fill(late.tests.begin(), late.tests.begin() + 4, 0.0);
  const auto lp = make_periods(clean(late, 1e6), 7);
  REQUIRE(lp.size() == 2);
  CHECK(lp[0].start_day == 4);
}

TEST_CASE("clean-then-aggregate equals aggregate of clean input", "[data_io][property]") {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const RegionDataset ds = random_dataset(60, seed);
    REQUIRE(ds.cleaning_log.empty());
    const RegionDataset twice = clean(raw_series(ds.deaths, ds.cases, ds.tests), 1e6);
    const auto a = make_periods(ds, 7), b = make_periods(twice, 7);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].cases == b[k].cases);
      CHECK(a[k].cum_tests_end == b[k].cum_tests_end);
    }
  }
}

TEST_CASE("ingest is lossless for well-formed input", "[data_io][property]") {
  std::vector<RegionDataset> sets{random_dataset(30, 4), random_dataset(12, 5)};
  sets[1].region_code = "IN";
  sets[1].deaths[3] = 0.1 + 0.2;  // non-integer values survive exactly
  std::ostringstream text;
  write_timeseries(text, sets);
  std::istringstream in(text.str());
  const auto back = ingest_timeseries(in, registry());
  for (const auto& ds : sets) {
    const RawSeries& r = back.at(ds.region_code);
    CHECK(r.deaths == ds.deaths);
    CHECK(r.cases == ds.cases);
    CHECK(r.tests == ds.tests);
    CHECK(r.first_day == ds.first_day);
  }
}

TEST_CASE("horizon selection", "[data_io]") {
  auto raw = raw_series({0, 0, 0, 2, 1}, {1, 1, 1, 1, 1}, {9, 9, 9, 9, 9});
  const RegionDataset ds = clean(raw, 1e6);
  const Day start = default_horizon_start(ds);
  CHECK(format_date(start) == "2020-02-03");
  const RegionDataset r = restrict_to(ds, start, ds.date_of(4));
  CHECK(r.days() == 32);
  CHECK(r.deaths[30] == 2.0);
  CHECK(r.deaths[0] == 0.0);
  CHECK_THROWS(default_horizon_start(clean(raw_series({0}, {0}, {0}), 1e6)));
}

TEST_CASE("survey configuration", "[data_io][surveys]") {
  const auto builtin = builtin_surveys();
  REQUIRE(builtin.size() == 4);
  const auto back = parse_surveys(surveys_to_json(builtin));
  REQUIRE(back.size() == 4);
  CHECK(back[0].estimate == 0.0174);
  CHECK(back[0].sample_size == 3605);
  CHECK(back[2].region == "OH");
  CHECK(format_date(back[2].window_end) == "2020-07-28");

  CHECK_THROWS_AS(parse_surveys(nlohmann::json::parse(R"([{"region":"IN","kind":"viral","estimate":1.5,"sample_size":10,
      "window_start":"2020-04-25","window_end":"2020-04-29"}])")),
                  DataError);
  CHECK_THROWS_AS(load_surveys("/nonexistent/surveys.json"), DataError);

  auto raw = raw_series(std::vector<double>(90, 0), std::vector<double>(90, 1), std::vector<double>(90, 10));
  raw.region = "IN";
  raw.first_day = parse_date_or_throw("2020-03-01");
  RegionDataset ds = clean(raw, 6732219);
  attach_surveys(ds, builtin);
  REQUIRE(ds.surveys.size() == 2);
  CHECK(ds.surveys[0].start_day == 55);
  CHECK(ds.surveys[0].end_day == 59);
  ds.periods = make_periods(ds, 7);
  const auto obs = to_observations(ds);
  CHECK(obs.horizon == 90);
  CHECK(obs.surveys.size() == 2);

  RegionDataset short_ds = restrict_to(ds, ds.first_day, ds.date_of(40));
  CHECK_THROWS_AS(attach_surveys(short_ds, builtin), DataError);
}

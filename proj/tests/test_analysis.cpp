#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <sstream>

#include "sirbayes/analysis.hpp"
#include "sirbayes/synth.hpp"

using namespace sirbayes;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Draw table built from perturbations of a ground truth, two chains.
PosteriorDraws fake_draws(const ParameterVector& truth, std::size_t per_chain, std::uint64_t seed) {
  PosteriorDraws d;
  d.names = parameter_names(truth.horizon());
  d.chains = 2;
  d.per_chain = per_chain;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t r = 0; r < 2 * per_chain; ++r) {
    ParameterVector p = truth;
    p.ifr *= std::exp(0.05 * z(rng));
    p.gamma *= std::exp(0.03 * z(rng));
    const double scale = std::exp(0.02 * z(rng));
    for (double& b : p.beta) b *= scale;
    const auto flat = p.flatten();
    d.values.insert(d.values.end(), flat.begin(), flat.end());
    d.chain_id.push_back(r / per_chain);
    d.divergent.push_back(0);
    d.max_depth_hit.push_back(0);
    d.accept_stat.push_back(0.9);
  }
  d.update_diagnostics();
  return d;
}

struct Fixture {
  GroundTruth truth = desk_truth(60);
  RegionDataset data = generate(truth, 4);
  PosteriorDraws draws = fake_draws(truth.params, 100, 8);
};

bool monotone(const QuantileBands& b) {
  for (std::size_t t = 0; t < b.days(); ++t)
    for (std::size_t k = 1; k < b.values.size(); ++k) {
      const double a = b.values[k - 1][t], c = b.values[k][t];
      if (std::isnan(a) != std::isnan(c)) return false;
      if (!std::isnan(a) && a > c) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("type-7 quantile bands", "[analysis]") {
  const auto b = bands_of({{1.0}, {2.0}, {3.0}, {4.0}, {5.0}});
  CHECK_THAT(b.at_level(0.025)[0], WithinAbs(1.1, 1e-12));
  CHECK_THAT(b.at_level(0.25)[0], WithinAbs(2.0, 1e-12));
  CHECK_THAT(b.median()[0], WithinAbs(3.0, 1e-12));
  CHECK_THAT(b.at_level(0.975)[0], WithinAbs(4.9, 1e-12));
  const auto u = bands_of({{kUndefined}, {kUndefined}});
  CHECK(std::isnan(u.median()[0]));
}

TEST_CASE("summaries are nested and match per-draw identities", "[analysis]") {
  Fixture f;
  const auto set = trajectory_set(f.draws, f.data);
  REQUIRE(set.draws.size() == 200);
  for (std::size_t r = 0; r < set.draws.size(); r += 37) {
    const auto p = ParameterVector::unflatten(f.draws.row(r));
    for (std::size_t t = 0; t < p.horizon(); ++t) CHECK(set.draws[r].r_t[t] == p.beta[t] / p.gamma);
  }
  const auto s = summarize(set);
  for (const auto* b : {&s.cumulative_incidence, &s.daily_infections, &s.r_t, &s.undercount}) CHECK(monotone(*b));
  CHECK(s.ifr.lo <= s.ifr.median);
  CHECK(s.ifr.median <= s.ifr.hi);
  CHECK_THAT(s.ifr.median, WithinRel(0.007, 0.02));
}

TEST_CASE("undercount is undefined before the first case and at least one when infections exceed cases", "[analysis]") {
  Fixture f;
  std::fill(f.data.cases.begin(), f.data.cases.begin() + 5, 0.0);
  const auto set = trajectory_set(f.draws, f.data);
  const std::size_t first_case =
      static_cast<std::size_t>(std::find_if(f.data.cases.begin(), f.data.cases.end(), [](double c) { return c > 0; }) -
                               f.data.cases.begin());
  REQUIRE(first_case > 0);
  const auto s = summarize(set);
  for (std::size_t t = 0; t < first_case; ++t) CHECK(std::isnan(s.undercount.median()[t]));
  for (const auto& d : set.draws) {
    const auto uc = undercount_of(d.traj, f.data.cases);
    double cum = 0.0;
    for (std::size_t t = 0; t < uc.size(); ++t) {
      cum += f.data.cases[t];
      if (cum > 0.0 && cumulative_incidence(d.traj.states[t + 1]) >= cum) CHECK(uc[t] >= 1.0);
    }
  }
}

TEST_CASE("aggregation is linear in the regions", "[analysis]") {
  Fixture f;
  const auto a = trajectory_set(f.draws, f.data);
  SECTION("single region is the identity") {
    const auto one = aggregate_regions({a});
    for (std::size_t k = 0; k < a.draws.size(); k += 19)
      for (std::size_t t = 0; t <= a.days(); ++t) {
        CHECK(one.draws[k].traj.states[t].i == a.draws[k].traj.states[t].i);
        CHECK(one.draws[k].traj.states[t].s == a.draws[k].traj.states[t].s);
      }
    for (std::size_t t = 5; t < a.days(); ++t) CHECK_THAT(one.draws[3].r_t[t], WithinRel(a.draws[3].r_t[t], 1e-8));
  }
  SECTION("two identical regions double every compartment") {
    const auto two = aggregate_regions({a, a});
    for (std::size_t k = 0; k < a.draws.size(); k += 23)
      for (std::size_t t = 0; t <= a.days(); ++t) CHECK(two.draws[k].traj.states[t].i == 2.0 * a.draws[k].traj.states[t].i);
  }
  SECTION("three regions match brute-force sums and weighted incidence") {
    GroundTruth g2 = f.truth, g3 = f.truth;
    g2.population = 2.5e6;
    g2.params.s1 = 0.98 * g2.population;
    g3.population = 4.0e5;
    g3.params.s1 = 0.95 * g3.population;
    g3.params.i1 = 50.0;
    RegionDataset d2 = generate(g2, 5), d3 = generate(g3, 6);
    const auto b = trajectory_set(fake_draws(g2.params, 100, 9), d2);
    const auto c = trajectory_set(fake_draws(g3.params, 60, 10), d3);
    const auto us = aggregate_regions({a, b, c});
    REQUIRE(us.draws.size() == 120);
    CHECK(us.population == a.population + b.population + c.population);
    for (std::size_t k = 0; k < us.draws.size(); k += 11) {
      const auto& ra = a.draws[k * 200 / 120];
      const auto& rb = b.draws[k * 200 / 120];
      const auto& rc = c.draws[k];
      for (std::size_t t = 0; t <= us.days(); ++t) {
        const double brute = ra.traj.states[t].r + rb.traj.states[t].r + rc.traj.states[t].r;
        CHECK(us.draws[k].traj.states[t].r == brute);
        const double weighted = (cumulative_incidence(ra.traj.states[t]) + cumulative_incidence(rb.traj.states[t]) +
                                 cumulative_incidence(rc.traj.states[t])) /
                                us.population;
        CHECK_THAT(cumulative_incidence(us.draws[k].traj.states[t]) / us.population, WithinAbs(weighted, 1e-12));
      }
    }
  }
  SECTION("mismatched date index is rejected") {
    auto shifted = a;
    shifted.first_day += std::chrono::days{1};
    CHECK_THROWS_AS(aggregate_regions({a, shifted}), std::invalid_argument);
  }
}

TEST_CASE("deaths shifted by the delay mean track infections", "[analysis]") {
  const GroundTruth g = desk_truth();
  const auto traj = trajectory_of(g.params, g.population);
  const auto mu = expected_deaths(traj.nu, g.params.ifr, g.delay);
  const auto implied = deaths_implied_infections(mu, g.params.ifr, 23);
  std::vector<double> x, y;
  for (std::size_t t = 0; t < implied.size(); ++t)
    if (!std::isnan(implied[t])) {
      x.push_back(implied[t]);
      y.push_back(traj.nu[t]);
    }
  const double mx = detail::mean_of(x), my = detail::mean_of(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  CHECK(sxy / std::sqrt(sxx * syy) > 0.95);
}

TEST_CASE("projection", "[analysis]") {
  Fixture f;
  const auto set = trajectory_set(f.draws, f.data);
  ProjectionScenario sc;
  sc.start_day = f.data.first_day + std::chrono::days{60};
  sc.ramp_end_day = sc.start_day + std::chrono::days{30};
  sc.horizon = 90;

  SECTION("zero doses reduce to plain simulation from the terminal state") {
    sc.end_level_lo = sc.end_level_hi = 0.0;
    const auto p = project(set, sc);
    const auto& d = set.draws[0];
    const double beta = d.r_t.back() * d.gamma;
    const auto plain = simulate(d.traj.states.back(), ContactPath{std::vector<double>(90, beta), 0.0}, d.gamma,
                                d.traj.population, 90);
    const auto cont = project_draw(d, 0.0, std::vector<double>(90, 0.0), true);
    for (std::size_t t = 0; t <= 90; ++t) CHECK(cont.states[t].s == plain.states[t].s);
    CHECK(p.days() == 90);
    CHECK(monotone(p.new_infections));
    CHECK(monotone(p.cumulative_immunity));
  }
  SECTION("subcritical contact rate decays monotonically") {
    TrajectoryDraw d = set.draws[0];
    for (double& r : d.r_t) r = 0.5;
    const auto traj = project_draw(d, 0.0, std::vector<double>(60, 0.0), true);
    for (std::size_t t = 1; t < traj.nu.size(); ++t) CHECK(traj.nu[t] < traj.nu[t - 1]);
  }
  SECTION("vaccination lowers infections and raises immunity") {
    sc.end_level_lo = sc.end_level_hi = 0.0;
    const auto none = project(set, sc);
    sc.end_level_lo = 5000.0;
    sc.end_level_hi = 7500.0;
    const auto vax = project(set, sc);
    double a = 0, b = 0;
    for (double v : none.added_infections) a += v;
    for (double v : vax.added_infections) b += v;
    CHECK(b < a);
    CHECK(vax.cumulative_immunity.median().back() > none.cumulative_immunity.median().back());
    for (double e : vax.end_levels) CHECK((e >= 5000.0 && e <= 7500.0));
    const auto again = project(set, sc);
    CHECK(again.end_levels == vax.end_levels);
  }
  SECTION("dose ramp shape") {
    sc.start_level = 100.0;
    const auto doses = sc.doses(400.0);
    CHECK(doses[0] == 100.0);
    CHECK_THAT(doses[15], WithinAbs(250.0, 1e-9));
    CHECK(doses[30] == 400.0);
    CHECK(doses[89] == 400.0);
  }
  SECTION("zero horizon gives empty tables") {
    sc.horizon = 0;
    const auto p = project(set, sc);
    CHECK(p.days() == 0);
    CHECK(projection_rows(p).empty());
  }
  SECTION("invalid scenarios") {
    sc.start_day += std::chrono::days{1};
    CHECK_THROWS_AS(project(set, sc), std::invalid_argument);
    sc.start_day -= std::chrono::days{1};
    sc.end_level_lo = -1.0;
    CHECK_THROWS_AS(project(set, sc), std::invalid_argument);
  }
}

TEST_CASE("summary tables round-trip losslessly", "[analysis]") {
  Fixture f;
  const auto s = summarize(f.draws, f.data);
  const auto rows = summary_rows(s);
  CHECK(rows.size() == 4 * 60 * 5);
  std::stringstream io;
  write_rows(io, rows);
  const auto back = read_rows(io);
  REQUIRE(back.size() == rows.size());
  CHECK(back == rows);
  std::stringstream bad("region,date\n");
  CHECK_THROWS_AS(read_rows(bad), DataError);
}

TEST_CASE("draw tables round-trip losslessly", "[analysis]") {
  Fixture f;
  std::stringstream io;
  write_draws(io, f.draws);
  const auto back = read_draws(io);
  CHECK(back.names == f.draws.names);
  CHECK(back.chains == 2);
  CHECK(back.per_chain == 100);
  CHECK(back.values == f.draws.values);
  CHECK(back.divergent == f.draws.divergent);
  std::stringstream again;
  write_draws(again, back);
  std::stringstream first;
  write_draws(first, f.draws);
  CHECK(again.str() == first.str());
}

TEST_CASE("JSON metadata and SVG output", "[analysis]") {
  Fixture f;
  const auto s = summarize(f.draws, f.data);
  const auto j = summary_json(s, &f.draws);
  CHECK(j["region"] == "SYN");
  CHECK(j["ifr"]["lo"].get<double>() <= j["ifr"]["hi"].get<double>());
  CHECK(j["diagnostics"]["chains"] == 2);
  std::ostringstream svg;
  write_summary_svg(svg, s);
  const std::string out = svg.str();
  CHECK(out.rfind("<svg", 0) == 0);
  CHECK(out.find("</svg>") != std::string::npos);
  std::size_t lines = 0;
  for (std::size_t pos = 0; (pos = out.find("<polyline", pos)) != std::string::npos; ++pos) ++lines;
  CHECK(lines == 4);
  CHECK(out.find("nan") == std::string::npos);
}

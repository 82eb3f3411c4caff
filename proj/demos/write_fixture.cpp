// Writes a two-region synthetic input set for the command-line tool:
// series.csv, surveys.json and config.json in the given directory.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "sirbayes/synth.hpp"

using namespace sirbayes;

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "fixture";
  std::filesystem::create_directories(dir);
  std::vector<RegionDataset> sets;
  std::vector<SurveyRecord> surveys;
  for (const auto& [code, seed] : {std::pair{"AA", 42}, {"BB", 43}}) {
    GroundTruth g = desk_truth();
    g.region = code;
    sets.push_back(generate(g, seed));
    for (const auto& r : survey_records(sets.back())) surveys.push_back(r);
  }
  std::ofstream series(dir / "series.csv");
  write_timeseries(series, sets);
  std::ofstream(dir / "surveys.json") << surveys_to_json(surveys).dump(2) << "\n";
  const nlohmann::json config{
      {"timeseries", "series.csv"},
      {"surveys", "surveys.json"},
      {"populations", {{"AA", kDeskPopulation}, {"BB", kDeskPopulation}}},
      {"horizon", {{"start", format_date(sets.front().first_day)}}},
      {"sampler", {{"chains", 4}, {"steps", 2000}, {"warmup", 1000}, {"target_accept", 0.9}, {"seed", 1}}},
      {"chaining", {{"order", {"AA"}}, {"params", {"gamma", "phi"}}}},
      {"output", "out"},
      {"projection", {{"horizon_days", 60}, {"start_level", 1000}, {"end_level_lo", 5000}, {"end_level_hi", 7500}}}};
  std::ofstream(dir / "config.json") << config.dump(2) << "\n";
  std::cout << "wrote " << (dir / "config.json").string() << "\n";
  return 0;
}

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "passflow/cli.hpp"
#include "passflow/scenario.hpp"
#include "support.hpp"

namespace {

using namespace passflow;
using passflow::testing::data_path;
using passflow::testing::fixture;
using passflow::testing::TempDir;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::size_t lines_in(const std::filesystem::path& p) {
  const auto text = slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

// Ten minutes of synthetic turnstile and train data on the three-station line.
void write_three_station_data(const TempDir& dir) {
  scenario::ScenarioSpec spec;
  spec.topology = fixture("three_station");
  spec.duration = 10;
  spec.seed = 5;
  spec.start = *ingest::parse_timestamp("2014-02-25T07:00:00");
  spec.default_entry_rate = 2.0;
  spec.default_headway = 3;
  const auto truth = scenario::generate_truth(spec);
  write(dir / "turnstile.csv", truth.turnstile_csv);
  write(dir / "events.csv", truth.events_csv);
}

std::vector<std::string> simulate_args(const TempDir& dir, const std::string& out) {
  return {"simulate",
          "--topology",
          data_path("three_station.json").string(),
          "--turnstile",
          (dir / "turnstile.csv").string(),
          "--events",
          (dir / "events.csv").string(),
          "--out",
          (dir / out).string()};
}

TEST(Simulate, WritesTwoSnapshotsPerTimestep) {
  TempDir dir;
  write_three_station_data(dir);
  const auto r = run_cli(simulate_args(dir, "out"));
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(lines_in(dir / "out" / "snapshots.jsonl"), 20u);
  EXPECT_EQ(lines_in(dir / "out" / "metrics.csv"), 21u);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "terminus_flows.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "requests.jsonl"));
  EXPECT_NE(r.out.find("simulated 10 timesteps"), std::string::npos) << r.out;

  std::ifstream snaps(dir / "out" / "snapshots.jsonl");
  std::string line;
  std::getline(snaps, line);
  const auto first = nlohmann::json::parse(line);
  EXPECT_EQ(first.at("phase"), "arrival");
  EXPECT_EQ(first.at("boxes").size(), 12u);
}

TEST(Simulate, RerunIsByteIdentical) {
  TempDir dir;
  write_three_station_data(dir);
  ASSERT_EQ(run_cli(simulate_args(dir, "a")).code, cli::kExitOk);
  ASSERT_EQ(run_cli(simulate_args(dir, "b")).code, cli::kExitOk);
  for (const auto* name : {"snapshots.jsonl", "metrics.csv", "terminus_flows.csv", "requests.jsonl"}) {
    EXPECT_EQ(slurp(dir / "a" / name), slurp(dir / "b" / name)) << name;
  }
}

TEST(Simulate, MissingTopologyIsInputError) {
  TempDir dir;
  write_three_station_data(dir);
  auto args = simulate_args(dir, "out");
  const auto missing = (dir / "nope.json").string();
  args[2] = missing;
  const auto r = run_cli(args);
  EXPECT_EQ(r.code, cli::kExitInputError);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST(Simulate, MissingDataFlagIsInputError) {
  const auto r = run_cli({"simulate", "--topology", data_path("three_station.json").string()});
  EXPECT_EQ(r.code, cli::kExitInputError);
  EXPECT_NE(r.err.find("--turnstile"), std::string::npos) << r.err;
}

TEST(Simulate, ReportsEnableAssimilation) {
  TempDir dir;
  write_three_station_data(dir);
  write(dir / "reports.jsonl",
        "{\"t\": \"2014-02-25T07:03:10\", \"location\": {\"platform\": \"B\"}, \"level\": 3, \"reporter\": \"u\"}\n");
  auto args = simulate_args(dir, "out");
  args.push_back("--reports");
  args.push_back((dir / "reports.jsonl").string());
  ASSERT_EQ(run_cli(args).code, cli::kExitOk);
  std::ifstream metrics(dir / "out" / "metrics.csv");
  std::string line;
  int with_nis = 0;
  while (std::getline(metrics, line)) {
    if (line.find(",departure,") != std::string::npos && line.find(",,") == std::string::npos) ++with_nis;
  }
  EXPECT_EQ(with_nis, 1);
}

TEST(Validate, AcceptsFixture) {
  const auto r = run_cli({"validate", "--topology", data_path("three_station.json").string()});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("ok"), std::string::npos);
}

TEST(Validate, RejectsCorruptTransfers) {
  const auto r = run_cli({"validate", "--topology", data_path("corrupt_transfers.json").string()});
  EXPECT_EQ(r.code, cli::kExitValidationError);
  EXPECT_NE(r.out.find("invalid"), std::string::npos) << r.out;
}

TEST(Validate, EmptyEventFileMeansIdentity) {
  TempDir dir;
  write(dir / "events.csv", "timestamp,station,line,direction,event,vehicle_id\n");
  const auto r = run_cli(
      {"validate", "--topology", data_path("three_station.json").string(), "--events", (dir / "events.csv").string()});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("identity"), std::string::npos) << r.out;
}

TEST(Validate, UnknownSubcommandIsInputError) {
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kExitInputError);
  EXPECT_EQ(run_cli({}).code, cli::kExitInputError);
}

TEST(Twin, WritesOutputsAndSummary) {
  TempDir dir;
  auto doc = load_json_file(data_path("twin_spec.json"));
  doc["topology"] = data_path("five_station.json").string();
  doc["duration"] = 30;
  write(dir / "spec.json", doc.dump());
  const auto r = run_cli({"twin", (dir / "spec.json").string(), "--out", (dir / "out").string(), "--seed", "7"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  for (const auto* name : {"turnstile.csv", "events.csv", "rmse.csv", "trajectories.csv", "nis.csv", "summary.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / name)) << name;
  }
  EXPECT_EQ(lines_in(dir / "out" / "rmse.csv"), 31u);
  const auto summary = load_json_file(dir / "out" / "summary.json");
  EXPECT_EQ(summary.at("seed"), 7);
  EXPECT_EQ(summary.at("timesteps"), 30);
}

TEST(Twin, InvalidSpecIsInputError) {
  TempDir dir;
  auto doc = load_json_file(data_path("twin_spec.json"));
  doc["topology"] = data_path("five_station.json").string();
  doc["trains"]["default_headway"] = 1;
  write(dir / "spec.json", doc.dump());
  const auto r = run_cli({"twin", (dir / "spec.json").string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, cli::kExitInputError);
  EXPECT_NE(r.err.find("headway"), std::string::npos) << r.err;
}

TEST(Config, FileSuppliesFlags) {
  TempDir dir;
  write_three_station_data(dir);
  write(dir / "run.toml", "topology = \"" + data_path("three_station.json").string() + "\"\n");
  const auto r = run_cli({"validate", "--config", (dir / "run.toml").string()});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
}

}  // namespace

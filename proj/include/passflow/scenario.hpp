#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "passflow/ingest.hpp"
#include "passflow/kalman.hpp"
#include "passflow/simulation.hpp"

namespace passflow::scenario {

enum class TruthMode {
  integer,   // integer passengers, multinomial splits, exact ledger
  gaussian,  // x = F x + B u + w with w ~ N(0, Q); matches the filter's model
};

enum class ReportPolicy { none, uniform_platform, full_coverage_counts, trigger_responsive };

std::string_view to_string(ReportPolicy policy);
ReportPolicy parse_report_policy(std::string_view text);

struct Headway {
  LineId line;
  Direction direction = Direction::northbound;
  long headway = 6;
  long offset = 0;
};

struct ReportSettings {
  ReportPolicy policy = ReportPolicy::uniform_platform;
  double rate = 5.0;   // reports per timestep (uniform_platform)
  double noise = 5.0;  // standard deviation added to true counts, passengers
  double capacity = 120.0;
};

struct ScenarioSpec {
  nlohmann::json topology;
  long duration = 120;
  std::uint64_t seed = 1;
  ingest::Seconds dt = 60;
  ingest::Seconds start = 0;
  TruthMode mode = TruthMode::integer;

  // Per-timestep Poisson entry rates; exit propensity is the per-timestep
  // probability that a passenger in an alighting box leaves the system.
  std::map<StationId, double, std::less<>> entry_rate;
  std::map<StationId, double, std::less<>> exit_propensity;
  // Poisson exit rates used in gaussian mode, where boxes hold real numbers.
  std::map<StationId, double, std::less<>> exit_rate;
  double default_entry_rate = 0.0;
  double default_exit_propensity = 0.5;
  // Integer mode: each box starts with Poisson(initial_load) passengers.
  // Gaussian mode draws the initial state from N(0, sigma0^2) instead.
  double initial_load = 0.0;

  long travel_time = 2;
  long dwell = 1;
  long default_headway = 6;
  std::vector<Headway> headways;

  ReportSettings reports;
  filter::NoiseConfig noise;
  // Stations whose exits are withheld from the emitted turnstile file.
  std::vector<StationId> drop_exits_at;

  double entry_rate_at(std::string_view station) const;
  double exit_propensity_at(std::string_view station) const;
  double exit_rate_at(std::string_view station) const;
  long headway_for(std::string_view line, Direction direction) const;
};

/// Topology may be inline or a path relative to `base`. Throws SpecInvalid.
ScenarioSpec parse_spec(const nlohmann::json& document, const std::filesystem::path& base = {});
ScenarioSpec load_spec(const std::filesystem::path& path);
nlohmann::json to_json(const ScenarioSpec& spec);

struct ScheduledEvent {
  dynamics::VehicleEventCount event;
  LineId line;
  std::string vehicle;
  ingest::Seconds offset = 0;  // seconds into the timestep, for the CSV stamp
};

/// Train timetable over [0, duration): train n of a (line, direction) takes
/// route n mod routes and passes the line's fork (or its first station) at
/// n * headway + offset.
std::vector<ScheduledEvent> build_schedule(const NetworkGraph& graph, const ScenarioSpec& spec);

struct Truth {
  std::shared_ptr<const NetworkModel> model;
  // states[0] is the initial state; states[k + 1] follows timestep k.
  std::vector<Eigen::VectorXd> states;
  std::vector<std::vector<dynamics::VehicleEventCount>> events;
  std::vector<dynamics::TurnstileCounts> counts;  // true counts, before any withholding
  std::vector<std::vector<BoxFlow>> flows;        // per timestep, both sub-steps
  double total_entries = 0.0;
  double total_exits = 0.0;
  std::string turnstile_csv;
  std::string events_csv;
};

/// Deterministic given the spec (seed included).
Truth generate_truth(const ScenarioSpec& spec);

/// True arriving mass per terminus and bin of `steps_per_bin` timesteps.
std::map<StationId, std::map<long, double>> terminus_arrivals(const Truth& truth, long steps_per_bin);

struct TwinResult {
  std::vector<Eigen::VectorXd> truth;
  std::vector<Eigen::VectorXd> open_loop;
  std::vector<Eigen::VectorXd> assimilated;
  std::vector<double> rmse_open;
  std::vector<double> rmse_assimilated;
  std::vector<double> nis;               // one per update of the assimilating arm
  std::vector<std::size_t> update_sizes; // measurement dimension per update
  std::size_t requests_emitted = 0;
  std::size_t requests_answered = 0;

  double mean_rmse_open() const;
  double mean_rmse_assimilated() const;
};

/// Runs the truth through the emitted turnstile and train-record files and
/// the ingest pipeline, then steps an open-loop and an assimilating filter.
TwinResult run_twin(const ScenarioSpec& spec);

double rmse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth);

struct PairedTest {
  double mean_difference = 0.0;
  double t_statistic = 0.0;
  double p_value = 1.0;  // one-sided, H1: mean(a - b) > 0
};
PairedTest paired_one_sided_test(std::span<const double> a, std::span<const double> b);

/// Random valid topology document with at most `max_stations` stations: a
/// line, optionally forked, optionally crossed by a second line with
/// transfers at the shared station.
nlohmann::json random_topology(std::mt19937_64& rng, int max_stations = 8);

}  // namespace passflow::scenario

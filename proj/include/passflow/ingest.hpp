#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "passflow/dynamics.hpp"
#include "passflow/network.hpp"
#include "passflow/observation.hpp"

namespace passflow::ingest {

// Seconds since 1970-01-01T00:00:00, timezone-naive.
using Seconds = std::int64_t;

/// Accepts YYYY-MM-DDTHH:MM[:SS[.fff]][Z], with 'T' or a space separator.
std::optional<Seconds> parse_timestamp(std::string_view text);
std::string format_timestamp(Seconds t);

struct TurnstileRecord {
  Seconds timestamp = 0;
  StationId station;
  double entries = 0.0;
  double exits = 0.0;
};

struct RawTrainRecord {
  Seconds timestamp = 0;
  StationId station;
  LineId line;
  std::string direction;  // dataset label, resolved through the line's alias table
  dynamics::EventKind kind = dynamics::EventKind::departure;
  std::string vehicle_id;
};

struct ReportRecord {
  // Wall-clock stamp; when absent the payload's integer timestep is used.
  std::optional<Seconds> timestamp;
  std::variant<observation::CrowdednessReport, observation::CountMeasurement> payload;
};

struct Warning {
  std::size_t line = 0;
  std::string message;
};

template <class Record>
struct Parsed {
  std::vector<Record> records;
  std::vector<Warning> warnings;
};

/// CSV with header `timestamp,station,entries,exits`. Rows naming stations
/// absent from `graph` are kept and reported as warnings; out-of-order rows
/// are sorted with a warning. Throws MalformedRow naming source and line.
Parsed<TurnstileRecord> parse_turnstile(std::istream& in, const NetworkGraph* graph = nullptr,
                                        std::string_view source = "turnstile");
Parsed<TurnstileRecord> parse_turnstile_file(const std::filesystem::path& path, const NetworkGraph* graph = nullptr);

/// CSV with header `timestamp,station,line,direction,event,vehicle_id`.
Parsed<RawTrainRecord> parse_train_records(std::istream& in, std::string_view source = "events");
Parsed<RawTrainRecord> parse_train_records_file(const std::filesystem::path& path);

/// JSON lines; each line a crowdedness report ("level") or a count
/// measurement ("count"). "t" is an integer timestep or an ISO-8601 string.
Parsed<ReportRecord> parse_reports(std::istream& in, std::string_view source = "reports");
Parsed<ReportRecord> parse_reports_file(const std::filesystem::path& path);

struct Clock {
  Seconds origin = 0;
  Seconds step = 60;

  long timestep_of(Seconds t) const;
  Seconds start_of(long timestep) const { return origin + timestep * step; }
};

/// Origin at the earliest timestamp across the series, floored to `step`.
Clock default_clock(std::span<const TurnstileRecord> turnstile, std::span<const RawTrainRecord> trains,
                    std::span<const ReportRecord> reports, Seconds step = 60);

/// Bins train records into per-(timestep, edge, direction, kind) counts.
/// Departures map to the station's outgoing edge for the direction, arrivals
/// to the incoming one; at a fork the vehicle's neighbouring record picks
/// the branch. Throws UnmappableRecord otherwise.
std::vector<dynamics::VehicleEventCount> aggregate_vehicle_events(std::span<const RawTrainRecord> records,
                                                                  const NetworkGraph& graph, const Clock& clock);

struct TimestepInputs {
  long timestep = 0;
  dynamics::TurnstileCounts counts;
  std::vector<dynamics::VehicleEventCount> events;
  std::vector<observation::CrowdednessReport> reports;
  std::vector<observation::CountMeasurement> measurements;

  bool has_measurements() const { return !reports.empty() || !measurements.empty(); }
  bool operator==(const TimestepInputs&) const = default;
};

void to_json(nlohmann::json& j, const TimestepInputs& inputs);
void from_json(const nlohmann::json& j, TimestepInputs& inputs);

/// Dense timestep sequence over the union of the inputs' windows; minutes
/// without data become zero-input steps. Turnstile rows for stations not in
/// `graph` are dropped. Throws EmptyWindow when there is nothing to bin.
std::vector<TimestepInputs> assemble_inputs(const NetworkGraph& graph, std::span<const TurnstileRecord> turnstile,
                                            std::span<const dynamics::VehicleEventCount> events,
                                            std::span<const ReportRecord> reports, const Clock& clock);

}  // namespace passflow::ingest

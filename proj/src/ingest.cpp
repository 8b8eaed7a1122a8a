#include "passflow/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "passflow/error.hpp"

namespace passflow::ingest {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

[[noreturn]] void malformed(std::string_view source, std::size_t line, const std::string& why) {
  throw Error(ErrorCode::malformed_row, std::string(source) + ":" + std::to_string(line) + ": " + why);
}

std::optional<int> parse_int(std::string_view s) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

std::optional<double> parse_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  const std::string copy(s);
  char* end = nullptr;
  const double v = std::strtod(copy.c_str(), &end);
  if (end != copy.c_str() + copy.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

void expect_header(std::istream& in, std::string_view expected, std::string_view source) {
  std::string header;
  if (!std::getline(in, header)) malformed(source, 1, "missing header");
  if (trim(header) != expected) {
    malformed(source, 1, "expected header '" + std::string(expected) + "'");
  }
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

std::optional<Seconds> parse_timestamp(std::string_view text) {
  text = trim(text);
  if (text.size() < 16 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':') {
    return std::nullopt;
  }
  auto y = parse_int(text.substr(0, 4));
  auto mo = parse_int(text.substr(5, 2));
  auto d = parse_int(text.substr(8, 2));
  auto h = parse_int(text.substr(11, 2));
  auto mi = parse_int(text.substr(14, 2));
  std::optional<int> sec = 0;
  std::string_view rest = text.substr(16);
  if (!rest.empty() && rest.front() == ':') {
    if (rest.size() < 3) return std::nullopt;
    sec = parse_int(rest.substr(1, 2));
    rest.remove_prefix(3);
    if (!rest.empty() && rest.front() == '.') {
      rest.remove_prefix(1);
      while (!rest.empty() && rest.front() >= '0' && rest.front() <= '9') rest.remove_prefix(1);
    }
  }
  if (rest == "Z") rest = {};
  if (!rest.empty() || !y || !mo || !d || !h || !mi || !sec) return std::nullopt;
  if (*h > 23 || *mi > 59 || *sec > 60) return std::nullopt;

  using namespace std::chrono;
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  const auto days_since_epoch = sys_days{ymd}.time_since_epoch().count();
  return static_cast<Seconds>(days_since_epoch) * 86400 + *h * 3600 + *mi * 60 + *sec;
}

std::string format_timestamp(Seconds t) {
  using namespace std::chrono;
  const auto days_count = static_cast<long>(std::floor(static_cast<double>(t) / 86400.0));
  const Seconds in_day = t - static_cast<Seconds>(days_count) * 86400;
  const year_month_day ymd{sys_days{days{days_count}}};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long long>(in_day / 3600), static_cast<long long>((in_day / 60) % 60),
                static_cast<long long>(in_day % 60));
  return buf;
}

Parsed<TurnstileRecord> parse_turnstile(std::istream& in, const NetworkGraph* graph, std::string_view source) {
  Parsed<TurnstileRecord> out;
  expect_header(in, "timestamp,station,entries,exits", source);
  std::string line;
  std::size_t lineno = 1;
  bool sorted = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) malformed(source, lineno, "expected 4 fields");
    TurnstileRecord r;
    const auto ts = parse_timestamp(f[0]);
    if (!ts) malformed(source, lineno, "bad timestamp '" + std::string(f[0]) + "'");
    r.timestamp = *ts;
    r.station = std::string(f[1]);
    if (r.station.empty()) malformed(source, lineno, "empty station");
    const auto entries = parse_number(f[2]);
    const auto exits = parse_number(f[3]);
    if (!entries || !exits) malformed(source, lineno, "counts must be numbers");
    if (*entries < 0.0 || *exits < 0.0) malformed(source, lineno, "negative count");
    r.entries = *entries;
    r.exits = *exits;
    if (graph != nullptr && !graph->has_station(r.station)) {
      out.warnings.push_back({lineno, "unknown station '" + r.station + "' (kept for audit)"});
    }
    if (!out.records.empty() && r.timestamp < out.records.back().timestamp) sorted = false;
    out.records.push_back(std::move(r));
  }
  if (!sorted) {
    out.warnings.push_back({0, std::string(source) + ": timestamps not monotone; records sorted"});
    std::stable_sort(out.records.begin(), out.records.end(),
                     [](const TurnstileRecord& a, const TurnstileRecord& b) { return a.timestamp < b.timestamp; });
  }
  return out;
}

Parsed<TurnstileRecord> parse_turnstile_file(const std::filesystem::path& path, const NetworkGraph* graph) {
  auto in = open_or_throw(path);
  return parse_turnstile(in, graph, path.string());
}

Parsed<RawTrainRecord> parse_train_records(std::istream& in, std::string_view source) {
  Parsed<RawTrainRecord> out;
  expect_header(in, "timestamp,station,line,direction,event,vehicle_id", source);
  std::string line;
  std::size_t lineno = 1;
  bool sorted = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) malformed(source, lineno, "expected 6 fields");
    RawTrainRecord r;
    const auto ts = parse_timestamp(f[0]);
    if (!ts) malformed(source, lineno, "bad timestamp '" + std::string(f[0]) + "'");
    r.timestamp = *ts;
    r.station = std::string(f[1]);
    r.line = std::string(f[2]);
    r.direction = std::string(f[3]);
    if (f[4] == "departure") {
      r.kind = dynamics::EventKind::departure;
    } else if (f[4] == "arrival") {
      r.kind = dynamics::EventKind::arrival;
    } else {
      malformed(source, lineno, "event must be 'departure' or 'arrival'");
    }
    r.vehicle_id = std::string(f[5]);
    if (r.station.empty() || r.line.empty() || r.direction.empty()) malformed(source, lineno, "empty field");
    if (!out.records.empty() && r.timestamp < out.records.back().timestamp) sorted = false;
    out.records.push_back(std::move(r));
  }
  if (!sorted) {
    out.warnings.push_back({0, std::string(source) + ": timestamps not monotone; records sorted"});
    std::stable_sort(out.records.begin(), out.records.end(),
                     [](const RawTrainRecord& a, const RawTrainRecord& b) { return a.timestamp < b.timestamp; });
  }
  return out;
}

Parsed<RawTrainRecord> parse_train_records_file(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_train_records(in, path.string());
}

Parsed<ReportRecord> parse_reports(std::istream& in, std::string_view source) {
  Parsed<ReportRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ReportRecord rec;
      if (j.contains("t") && j.at("t").is_string()) {
        rec.timestamp = parse_timestamp(j.at("t").get<std::string>());
        if (!rec.timestamp) malformed(source, lineno, "bad timestamp");
      } else if (!j.contains("t") || !j.at("t").is_number_integer()) {
        malformed(source, lineno, "\"t\" must be an integer timestep or an ISO-8601 string");
      }
      if (j.contains("level")) {
        rec.payload = j.get<observation::CrowdednessReport>();
      } else {
        rec.payload = j.get<observation::CountMeasurement>();
      }
      out.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      malformed(source, lineno, e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::malformed_row) throw;
      malformed(source, lineno, e.what());
    }
  }
  return out;
}

Parsed<ReportRecord> parse_reports_file(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_reports(in, path.string());
}

long Clock::timestep_of(Seconds t) const {
  const Seconds delta = t - origin;
  Seconds q = delta / step;
  if (delta % step != 0 && delta < 0) --q;
  return static_cast<long>(q);
}

Clock default_clock(std::span<const TurnstileRecord> turnstile, std::span<const RawTrainRecord> trains,
                    std::span<const ReportRecord> reports, Seconds step) {
  if (step <= 0) throw Error(ErrorCode::spec_invalid, "timestep length must be positive");
  Seconds earliest = std::numeric_limits<Seconds>::max();
  for (const auto& r : turnstile) earliest = std::min(earliest, r.timestamp);
  for (const auto& r : trains) earliest = std::min(earliest, r.timestamp);
  for (const auto& r : reports) {
    if (r.timestamp) earliest = std::min(earliest, *r.timestamp);
  }
  Clock c;
  c.step = step;
  if (earliest != std::numeric_limits<Seconds>::max()) {
    c.origin = earliest - (((earliest % step) + step) % step);
  }
  return c;
}

std::vector<dynamics::VehicleEventCount> aggregate_vehicle_events(std::span<const RawTrainRecord> records,
                                                                  const NetworkGraph& graph, const Clock& clock) {
  // Per (vehicle, line) chronological record positions, for fork disambiguation.
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> by_vehicle;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].vehicle_id.empty()) by_vehicle[{records[i].vehicle_id, records[i].line}].push_back(i);
  }
  for (auto& [key, idx] : by_vehicle) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].timestamp < records[b].timestamp; });
  }
  auto neighbour_station = [&](std::size_t i, int offset) -> std::optional<StationId> {
    const auto& r = records[i];
    if (r.vehicle_id.empty()) return std::nullopt;
    const auto& idx = by_vehicle.at({r.vehicle_id, r.line});
    auto pos = std::find(idx.begin(), idx.end(), i) - idx.begin();
    const auto other = pos + offset;
    if (other < 0 || other >= static_cast<long>(idx.size())) return std::nullopt;
    return records[idx[static_cast<std::size_t>(other)]].station;
  };

  using Key = std::tuple<long, EdgeId, Direction, dynamics::EventKind>;
  std::map<Key, dynamics::VehicleEventCount> bins;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto unmappable = [&](const std::string& why) {
      return Error(ErrorCode::unmappable_record, "train record at '" + r.station + "' on line '" + r.line +
                                                     "' (" + format_timestamp(r.timestamp) + "): " + why);
    };
    if (!graph.has_station(r.station) || graph.station(r.station).membership(r.line) == nullptr) {
      throw unmappable("station is not on the line");
    }
    Direction dir{};
    try {
      dir = graph.resolve_direction(r.line, r.direction);
    } catch (const Error&) {
      throw unmappable("unknown direction label '" + r.direction + "'");
    }
    const bool departure = r.kind == dynamics::EventKind::departure;
    std::vector<EdgeDirection> candidates;
    for (const auto& ed : departure ? graph.outgoing(r.station) : graph.incoming(r.station)) {
      if (ed.direction == dir && graph.edge(ed.edge).line == r.line) candidates.push_back(ed);
    }
    if (candidates.size() > 1) {
      if (auto other = neighbour_station(i, departure ? 1 : -1)) {
        std::erase_if(candidates, [&](const EdgeDirection& ed) {
          return (departure ? graph.downstream(ed.edge, ed.direction) : graph.upstream(ed.edge, ed.direction)) !=
                 *other;
        });
      }
    }
    if (candidates.empty()) throw unmappable("no edge leaves or enters the station in that direction");
    if (candidates.size() > 1) throw unmappable("ambiguous branch at a fork");

    const long t = clock.timestep_of(r.timestamp);
    auto [it, inserted] = bins.try_emplace(Key{t, candidates.front().edge, dir, r.kind});
    if (inserted) {
      it->second.timestep = t;
      it->second.station = r.station;
      it->second.edge = candidates.front().edge;
      it->second.direction = dir;
      it->second.kind = r.kind;
      it->second.count = 0;
    }
    it->second.count += 1;
  }
  std::vector<dynamics::VehicleEventCount> out;
  out.reserve(bins.size());
  for (auto& [key, ev] : bins) out.push_back(std::move(ev));
  return out;
}

void to_json(nlohmann::json& j, const TimestepInputs& inputs) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [station, c] : inputs.counts) counts[station] = {{"entries", c.entries}, {"exits", c.exits}};
  j = nlohmann::json{{"t", inputs.timestep},
                     {"counts", counts},
                     {"events", inputs.events},
                     {"reports", inputs.reports},
                     {"measurements", inputs.measurements}};
}

void from_json(const nlohmann::json& j, TimestepInputs& inputs) {
  inputs.timestep = j.at("t").get<long>();
  inputs.counts.clear();
  const auto counts = j.value("counts", nlohmann::json::object());
  for (const auto& [station, c] : counts.items()) {
    inputs.counts[station] = {c.at("entries").get<double>(), c.at("exits").get<double>()};
  }
  inputs.events = j.value("events", std::vector<dynamics::VehicleEventCount>{});
  inputs.reports = j.value("reports", std::vector<observation::CrowdednessReport>{});
  inputs.measurements = j.value("measurements", std::vector<observation::CountMeasurement>{});
}

std::vector<TimestepInputs> assemble_inputs(const NetworkGraph& graph, std::span<const TurnstileRecord> turnstile,
                                            std::span<const dynamics::VehicleEventCount> events,
                                            std::span<const ReportRecord> reports, const Clock& clock) {
  long first = std::numeric_limits<long>::max();
  long last = std::numeric_limits<long>::min();
  auto extend = [&](long t) {
    first = std::min(first, t);
    last = std::max(last, t);
  };
  auto report_step = [&](const ReportRecord& r) {
    if (r.timestamp) return clock.timestep_of(*r.timestamp);
    return std::visit([](const auto& p) { return p.timestep; }, r.payload);
  };
  for (const auto& r : turnstile) extend(clock.timestep_of(r.timestamp));
  for (const auto& e : events) extend(e.timestep);
  for (const auto& r : reports) extend(report_step(r));
  if (first > last) throw Error(ErrorCode::empty_window, "no turnstile, event or report data to assemble");

  std::vector<TimestepInputs> out(static_cast<std::size_t>(last - first + 1));
  for (std::size_t i = 0; i < out.size(); ++i) out[i].timestep = first + static_cast<long>(i);
  auto at = [&](long t) -> TimestepInputs& { return out[static_cast<std::size_t>(t - first)]; };

  for (const auto& r : turnstile) {
    if (!graph.has_station(r.station)) continue;
    auto& c = at(clock.timestep_of(r.timestamp)).counts[r.station];
    c.entries += r.entries;
    c.exits += r.exits;
  }
  for (const auto& e : events) at(e.timestep).events.push_back(e);
  for (const auto& r : reports) {
    const long t = report_step(r);
    std::visit(
        [&](auto payload) {
          payload.timestep = t;
          if constexpr (std::is_same_v<decltype(payload), observation::CrowdednessReport>) {
            at(t).reports.push_back(std::move(payload));
          } else {
            at(t).measurements.push_back(std::move(payload));
          }
        },
        r.payload);
  }
  return out;
}

}  // namespace passflow::ingest

#include "passflow/observation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "passflow/error.hpp"

namespace passflow::observation {
namespace {

void check_level(int level) {
  if (level < 1 || level > kLevelCount) {
    throw Error(ErrorCode::level_out_of_range, "crowdedness level " + std::to_string(level) + " outside 1..6");
  }
}

long timestep_of(const CrowdednessReport& r) { return r.timestep; }
long timestep_of(const CountMeasurement& c) { return c.timestep; }

}  // namespace

double logarithmic_growth() {
  // Solve g + g^2 + ... + g^5 = 23, i.e. (g - 1) / (g^6 - 1) = 1/24.
  static const double g = [] {
    auto f = [](double x) {
      double sum = 0.0;
      double p = 1.0;
      for (int i = 1; i < kLevelCount; ++i) {
        p *= x;
        sum += p;
      }
      return sum - 23.0;
    };
    double lo = 1.0;
    double hi = 23.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (f(mid) > 0.0 ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
  }();
  return g;
}

LevelMapping LevelMapping::with_capacity(double capacity, LevelScale scale) {
  if (!(capacity > 0.0)) {
    throw Error(ErrorCode::invalid_report, "vehicle capacity must be positive");
  }
  LevelMapping m;
  m.vehicle_capacity = capacity;
  m.scale = scale;
  m.variance.fill((capacity / 12.0) * (capacity / 12.0));
  return m;
}

double LevelMapping::mean(int level) const {
  check_level(level);
  if (scale == LevelScale::linear) {
    return vehicle_capacity * (2.0 * level - 1.0) / 12.0;
  }
  const double g = logarithmic_growth();
  return std::min(vehicle_capacity, vehicle_capacity * (std::pow(g, level) - 1.0) / (std::pow(g, kLevelCount) - 1.0));
}

int LevelMapping::nearest_level(double count) const {
  int best = 1;
  double best_distance = std::numeric_limits<double>::infinity();
  for (int level = 1; level <= kLevelCount; ++level) {
    const double d = std::abs(mean(level) - count);
    if (d < best_distance) {
      best_distance = d;
      best = level;
    }
  }
  return best;
}

LevelMeasurement level_to_measurement(int level, const LevelMapping& mapping) {
  check_level(level);
  return {mapping.mean(level), mapping.variance[static_cast<std::size_t>(level - 1)]};
}

std::vector<StateIndex> support(const NetworkGraph& graph, const Location& location) {
  return std::visit(
      [&](const auto& loc) -> std::vector<StateIndex> {
        using T = std::decay_t<decltype(loc)>;
        if constexpr (std::is_same_v<T, PlatformLocation>) {
          if (!graph.has_station(loc.station)) {
            throw Error(ErrorCode::unknown_station, "report at unknown station '" + loc.station + "'");
          }
          return graph.boarding_boxes_at(loc.station);
        } else if constexpr (std::is_same_v<T, OnboardLocation>) {
          if (!graph.has_edge(loc.edge)) {
            throw Error(ErrorCode::unknown_edge, "report on unknown edge '" + loc.edge + "'");
          }
          if (loc.positional_uncertainty < 0) {
            throw Error(ErrorCode::invalid_report, "negative positional uncertainty");
          }
          std::vector<StateIndex> cols{graph.state_index(loc.edge, loc.direction, Role::onboard)};
          EdgeDirection cur{loc.edge, loc.direction};
          for (int i = 0; i < loc.positional_uncertainty; ++i) {
            auto prev = graph.preceding(cur);
            if (prev.empty()) break;
            // Upstream of a fork the chain follows the branch with the
            // smallest edge id.
            cur = prev.front();
            cols.push_back(graph.state_index(cur.edge, cur.direction, Role::onboard));
          }
          std::sort(cols.begin(), cols.end());
          return cols;
        } else {
          if (!graph.has_edge(loc.box.edge)) {
            throw Error(ErrorCode::unknown_edge, "measurement on unknown edge '" + loc.box.edge + "'");
          }
          return {graph.state_index(loc.box)};
        }
      },
      location);
}

MeasurementBatch build_observation(std::span<const CrowdednessReport> reports, const NetworkGraph& graph,
                                   const LevelMapping& mapping, std::span<const CountMeasurement> counts) {
  const auto m = static_cast<Eigen::Index>(reports.size() + counts.size());
  MeasurementBatch batch;
  batch.z.resize(m);
  batch.r.resize(m);
  batch.h.resize(m, static_cast<Eigen::Index>(graph.state_size()));

  std::optional<long> t;
  auto check_timestep = [&](long ts) {
    if (t && *t != ts) {
      throw Error(ErrorCode::mixed_timesteps, "measurements from timesteps " + std::to_string(*t) + " and " +
                                                  std::to_string(ts) + " in one batch");
    }
    t = ts;
  };
  auto inflation = [](const Location& loc) {
    if (const auto* onboard = std::get_if<OnboardLocation>(&loc)) {
      return 1.0 + onboard->positional_uncertainty;
    }
    return 1.0;
  };

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::Index row = 0;
  for (const auto& rep : reports) {
    check_timestep(timestep_of(rep));
    const auto lm = level_to_measurement(rep.level, mapping);
    for (auto col : support(graph, rep.location)) {
      triplets.emplace_back(row, static_cast<Eigen::Index>(col), 1.0);
    }
    batch.z[row] = lm.mean;
    batch.r[row] = lm.variance * inflation(rep.location);
    ++row;
  }
  for (const auto& c : counts) {
    check_timestep(timestep_of(c));
    if (!(c.variance > 0.0) || !std::isfinite(c.value)) {
      throw Error(ErrorCode::invalid_report, "count measurement needs a finite value and positive variance");
    }
    for (auto col : support(graph, c.location)) {
      triplets.emplace_back(row, static_cast<Eigen::Index>(col), 1.0);
    }
    batch.z[row] = c.value;
    batch.r[row] = c.variance * inflation(c.location);
    ++row;
  }
  batch.h.setFromTriplets(triplets.begin(), triplets.end());
  return batch;
}

void to_json(nlohmann::json& j, const Location& location) {
  std::visit(
      [&](const auto& loc) {
        using T = std::decay_t<decltype(loc)>;
        if constexpr (std::is_same_v<T, PlatformLocation>) {
          j = nlohmann::json{{"platform", loc.station}};
        } else if constexpr (std::is_same_v<T, OnboardLocation>) {
          j = nlohmann::json{{"onboard",
                              {{"edge", loc.edge},
                               {"direction", std::string(passflow::to_string(loc.direction))},
                               {"positional_uncertainty", loc.positional_uncertainty}}}};
        } else {
          j = nlohmann::json{{"gridbox", loc.box}};
        }
      },
      location);
}

Location location_from_json(const nlohmann::json& j) {
  try {
    if (j.contains("platform")) {
      return PlatformLocation{j.at("platform").get<std::string>()};
    }
    if (j.contains("onboard")) {
      const auto& o = j.at("onboard");
      OnboardLocation loc;
      loc.edge = o.at("edge").get<std::string>();
      loc.direction = parse_direction(o.at("direction").get<std::string>());
      loc.positional_uncertainty = o.value("positional_uncertainty", 0);
      if (loc.positional_uncertainty < 0) {
        throw Error(ErrorCode::invalid_report, "negative positional uncertainty");
      }
      return loc;
    }
    if (j.contains("gridbox")) {
      return BoxLocation{j.at("gridbox").get<GridBoxId>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_report, std::string("malformed location: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::invalid_report) throw;
    throw Error(ErrorCode::invalid_report, std::string("malformed location: ") + e.what());
  }
  throw Error(ErrorCode::invalid_report, "location must be one of platform, onboard, gridbox");
}

void to_json(nlohmann::json& j, const CrowdednessReport& report) {
  j = nlohmann::json{{"t", report.timestep}, {"location", report.location}, {"level", report.level},
                     {"reporter", report.reporter}};
  if (report.request_id) j["request_id"] = *report.request_id;
}

void from_json(const nlohmann::json& j, CrowdednessReport& report) {
  if (!j.is_object() || !j.contains("location") || !j.contains("level") || !j.at("level").is_number_integer()) {
    throw Error(ErrorCode::invalid_report, "report needs a location and an integer level");
  }
  report.timestep = j.contains("t") && j.at("t").is_number_integer() ? j.at("t").get<long>() : 0;
  report.location = location_from_json(j.at("location"));
  report.level = j.at("level").get<int>();
  check_level(report.level);
  report.reporter = j.contains("reporter") && j.at("reporter").is_string() ? j.at("reporter").get<std::string>() : "";
  report.request_id.reset();
  if (j.contains("request_id") && !j.at("request_id").is_null()) {
    if (!j.at("request_id").is_string()) throw Error(ErrorCode::invalid_report, "request_id must be a string");
    report.request_id = j.at("request_id").get<std::string>();
  }
}

void to_json(nlohmann::json& j, const CountMeasurement& count) {
  j = nlohmann::json{{"t", count.timestep},
                     {"location", count.location},
                     {"count", count.value},
                     {"variance", count.variance},
                     {"reporter", count.source}};
}

void from_json(const nlohmann::json& j, CountMeasurement& count) {
  if (!j.is_object() || !j.contains("location") || !j.contains("count") || !j.at("count").is_number()) {
    throw Error(ErrorCode::invalid_report, "count measurement needs a location and a numeric count");
  }
  count.timestep = j.contains("t") && j.at("t").is_number_integer() ? j.at("t").get<long>() : 0;
  count.location = location_from_json(j.at("location"));
  count.value = j.at("count").get<double>();
  count.variance = j.value("variance", 1.0);
  count.source = j.value("reporter", std::string{});
  if (!(count.variance > 0.0)) throw Error(ErrorCode::invalid_report, "count variance must be positive");
}

}  // namespace passflow::observation

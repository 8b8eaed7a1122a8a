#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

#include "passflow/network.hpp"

namespace passflow::observation {

enum class LevelScale { linear, logarithmic };

inline constexpr int kLevelCount = 6;

/// Maps the six-level crowdedness scale onto passenger counts.
struct LevelMapping {
  double vehicle_capacity = 120.0;
  LevelScale scale = LevelScale::linear;
  std::array<double, kLevelCount> variance{};

  // Default per-level variance is one bin half-width squared, (capacity/12)^2.
  static LevelMapping with_capacity(double capacity, LevelScale scale = LevelScale::linear);

  double mean(int level) const;
  int nearest_level(double count) const;
};

struct LevelMeasurement {
  double mean = 0.0;
  double variance = 0.0;
};

LevelMeasurement level_to_measurement(int level, const LevelMapping& mapping);

// Growth factor g of the logarithmic scale, chosen so level 1 maps to
// capacity / 24.
double logarithmic_growth();

struct PlatformLocation {
  StationId station;
  bool operator==(const PlatformLocation&) const = default;
};

struct OnboardLocation {
  EdgeId edge;
  Direction direction = Direction::northbound;
  // Number of consecutive upstream edges the reporter might be on instead.
  int positional_uncertainty = 0;
  bool operator==(const OnboardLocation&) const = default;
};

// Direct reference to a single grid box, used by counting sensors.
struct BoxLocation {
  GridBoxId box;
  bool operator==(const BoxLocation&) const = default;
};

using Location = std::variant<PlatformLocation, OnboardLocation, BoxLocation>;

struct CrowdednessReport {
  long timestep = 0;
  Location location;
  int level = 1;
  std::string reporter;
  std::optional<std::string> request_id;

  bool operator==(const CrowdednessReport&) const = default;
};

/// Integral passenger count from a sensor (or a synthetic oracle), bypassing
/// the level scale.
struct CountMeasurement {
  long timestep = 0;
  Location location;
  double value = 0.0;
  double variance = 1.0;
  std::string source;

  bool operator==(const CountMeasurement&) const = default;
};

struct MeasurementBatch {
  Eigen::SparseMatrix<double, Eigen::RowMajor> h;
  Eigen::VectorXd z;
  Eigen::VectorXd r;  // diagonal of R

  Eigen::Index size() const { return z.size(); }
  bool empty() const { return z.size() == 0; }
};

/// Columns of H touched by a measurement at `location`, in increasing order.
std::vector<StateIndex> support(const NetworkGraph& graph, const Location& location);

/// Stacks reports, then counts, one row each, preserving input order.
MeasurementBatch build_observation(std::span<const CrowdednessReport> reports, const NetworkGraph& graph,
                                   const LevelMapping& mapping, std::span<const CountMeasurement> counts = {});

void to_json(nlohmann::json& j, const Location& location);
Location location_from_json(const nlohmann::json& j);

// Report/measurement records carry an integer timestep under "t". Records
// stamped with wall-clock times are converted by the ingest layer first.
void to_json(nlohmann::json& j, const CrowdednessReport& report);
void from_json(const nlohmann::json& j, CrowdednessReport& report);
void to_json(nlohmann::json& j, const CountMeasurement& count);
void from_json(const nlohmann::json& j, CountMeasurement& count);

}  // namespace passflow::observation

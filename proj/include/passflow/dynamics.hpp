#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

#include "passflow/network.hpp"

namespace passflow::dynamics {

using SparseMatrix = Eigen::SparseMatrix<double>;

enum class EventKind : std::uint8_t { departure, arrival };

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view text);

struct VehicleEventCount {
  long timestep = 0;
  StationId station;
  EdgeId edge;
  Direction direction = Direction::northbound;
  EventKind kind = EventKind::departure;
  // Trains aggregated into this event. Only kept for diagnostics: the state
  // holds one onboard box per (edge, direction), so two trains move the same
  // mass as one.
  int count = 1;

  bool operator==(const VehicleEventCount&) const = default;
};

void to_json(nlohmann::json& j, const VehicleEventCount& e);
void from_json(const nlohmann::json& j, VehicleEventCount& e);

struct TransferTarget {
  EdgeDirection to;
  double fraction = 0.0;
};

/// Fractions of an alighting box routed to boarding boxes at the same
/// station in the sub-step after an arrival. Whatever is not routed stays in
/// the alighting box until exits drain it.
class TransferTable {
 public:
  // Throws InvalidTransfer if `from` does not end at `station`, `to` does not
  // start there, or the fraction is outside [0, 1]. Sums are not checked here;
  // see problems().
  void set(const NetworkGraph& graph, const EdgeDirection& from, const EdgeDirection& to, double fraction);

  const std::vector<TransferTarget>* targets(const EdgeDirection& from) const;
  const std::map<EdgeDirection, std::vector<TransferTarget>>& entries() const { return table_; }
  bool empty() const { return table_.empty(); }

  // Human-readable list of invariant violations (per-key sums above 1).
  std::vector<std::string> problems() const;

 private:
  std::map<EdgeDirection, std::vector<TransferTarget>> table_;
};

/// Reads the optional "through_fraction" and "transfers" members of a
/// topology document. Generated same-line continuations come first and are
/// overridden by explicit entries.
TransferTable parse_transfers(const nlohmann::json& document, const NetworkGraph& graph);

/// Per-station relative weights for attributing exits to incident alighting
/// boxes. Missing entries weigh 1.
using ExitWeights = std::map<StationId, std::map<EdgeDirection, double>, std::less<>>;
ExitWeights parse_exit_weights(const nlohmann::json& document, const NetworkGraph& graph);

using GravityTable = std::map<LineId, std::map<StationId, double, std::less<>>, std::less<>>;
GravityTable default_gravity(const NetworkGraph& graph);

struct TransitionMatrix {
  SparseMatrix matrix;
  long timestep = 0;
};

/// n_x x 2 n_s; column s is the entry column of station rank s, column
/// n_s + s its exit column.
struct ControlMatrix {
  SparseMatrix matrix;
};

using ControlVector = Eigen::VectorXd;

struct StationCounts {
  double entries = 0.0;
  double exits = 0.0;

  bool operator==(const StationCounts&) const = default;
};
using TurnstileCounts = std::map<StationId, StationCounts, std::less<>>;

inline Eigen::Index entry_slot(const NetworkGraph& g, std::string_view station) {
  return static_cast<Eigen::Index>(g.station_rank(station));
}
inline Eigen::Index exit_slot(const NetworkGraph& g, std::string_view station) {
  return static_cast<Eigen::Index>(g.station_count() + g.station_rank(station));
}

/// Identity by default. A departure moves the boarding column of its
/// (edge, direction) to the onboard row; an arrival moves the onboard column
/// to the alighting row; every alighting box in `armed_alighting` is routed
/// through the transfer table with the residual on its diagonal.
TransitionMatrix build_transition(const NetworkGraph& graph, std::span<const VehicleEventCount> events,
                                  const TransferTable& transfers,
                                  std::span<const StateIndex> armed_alighting = {});

ControlMatrix build_control_matrix(const NetworkGraph& graph, const GravityTable& gravity,
                                   const TransferTable& transfers, const ExitWeights& exit_weights = {});

ControlVector build_control_vector(const NetworkGraph& graph, const TurnstileCounts& counts);

struct ColumnReport {
  double max_sum_error = 0.0;
  double min_coefficient = 0.0;
  Eigen::Index worst_column = -1;
};

// Column-sum and sign audit. Columns without nonzeros are skipped when
// `skip_empty` is set (control matrices).
ColumnReport audit_columns(const SparseMatrix& m, bool skip_empty);

// Throw InvalidTransition when a column does not sum to one within
// `tolerance` or holds a negative coefficient.
void validate_transition(const TransitionMatrix& f, double tolerance = 1e-12);
void validate_control(const ControlMatrix& b, double tolerance = 1e-12);

std::string to_coordinate_list(const SparseMatrix& m);

}  // namespace passflow::dynamics

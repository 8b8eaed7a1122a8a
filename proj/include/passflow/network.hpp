#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace passflow {

using StationId = std::string;
using EdgeId = std::string;
using LineId = std::string;
using StateIndex = std::size_t;

// Northbound means travel toward increasing line position, i.e. toward the
// high-position terminus ("terminus A"). The labels are kept for display;
// nothing assumes a geographic orientation.
enum class Direction : std::uint8_t { northbound = 0, southbound = 1 };
enum class Role : std::uint8_t { boarding = 0, onboard = 1, alighting = 2 };

std::string_view to_string(Direction direction);
std::string_view to_string(Role role);
Direction parse_direction(std::string_view text);
Role parse_role(std::string_view text);

struct EdgeDirection {
  EdgeId edge;
  Direction direction = Direction::northbound;

  auto operator<=>(const EdgeDirection&) const = default;
};

struct GridBoxId {
  EdgeId edge;
  Direction direction = Direction::northbound;
  Role role = Role::boarding;

  auto operator<=>(const GridBoxId&) const = default;
};

std::string to_label(const GridBoxId& box);
void to_json(nlohmann::json& j, const GridBoxId& box);
void from_json(const nlohmann::json& j, GridBoxId& box);

struct LineMembership {
  LineId line;
  double position = 0.0;
  bool terminus = false;
};

struct Station {
  StationId id;
  std::string name;
  std::vector<LineMembership> lines;

  const LineMembership* membership(std::string_view line) const;
};

struct Edge {
  EdgeId id;
  StationId from;
  StationId to;
  LineId line;
};

struct Line {
  LineId id;
  StationId center;
  // Ordered by position, ties broken by id.
  std::vector<StationId> stations;
  std::vector<StationId> termini;
  std::optional<StationId> fork;
  std::map<std::string, Direction, std::less<>> direction_aliases;
};

/// Immutable transit graph plus the grid-box <-> state-index bijection.
///
/// State layout: edges sorted by id, then northbound < southbound, then
/// boarding < onboard < alighting, so index = 6 * edge_rank + 3 * dir + role.
class NetworkGraph {
 public:
  std::size_t state_size() const { return 6 * edges_.size(); }
  std::size_t station_count() const { return stations_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  const std::vector<Station>& stations() const { return stations_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::map<LineId, Line, std::less<>>& lines() const { return lines_; }

  bool has_station(std::string_view id) const;
  bool has_edge(std::string_view id) const;
  const Station& station(std::string_view id) const;
  const Edge& edge(std::string_view id) const;
  const Line& line(std::string_view id) const;
  std::size_t station_rank(std::string_view id) const;
  std::size_t edge_rank(std::string_view id) const;

  StateIndex state_index(const GridBoxId& box) const;
  StateIndex state_index(std::string_view edge, Direction direction, Role role) const;
  GridBoxId gridbox_of(StateIndex index) const;

  double position(std::string_view station, std::string_view line) const;
  const StationId& upstream(std::string_view edge, Direction direction) const;
  const StationId& downstream(std::string_view edge, Direction direction) const;

  // (edge, direction) pairs whose upstream / downstream station is `station`,
  // across all lines, sorted.
  const std::vector<EdgeDirection>& outgoing(std::string_view station) const;
  const std::vector<EdgeDirection>& incoming(std::string_view station) const;
  // Same-line edges travelled in the same direction immediately before `ed`.
  std::vector<EdgeDirection> preceding(const EdgeDirection& ed) const;

  std::vector<StateIndex> boarding_boxes_at(std::string_view station) const;
  std::vector<StateIndex> alighting_boxes_at(std::string_view station) const;

  Direction resolve_direction(std::string_view line, std::string_view label) const;

 private:
  friend NetworkGraph build_network(const nlohmann::json& document);

  struct EdgeEnds {
    StationId low;
    StationId high;
  };

  std::vector<Station> stations_;
  std::vector<Edge> edges_;
  std::vector<EdgeEnds> ends_;
  std::map<LineId, Line, std::less<>> lines_;
  std::map<StationId, std::size_t, std::less<>> station_rank_;
  std::map<EdgeId, std::size_t, std::less<>> edge_rank_;
  std::vector<std::vector<EdgeDirection>> outgoing_;
  std::vector<std::vector<EdgeDirection>> incoming_;
};

/// Builds a graph from a topology document (schema 1, see docs/formats.md).
/// Throws Error with DuplicateId, DisconnectedGraph, DanglingEdgeReference
/// or InvalidTopology naming the offending id.
NetworkGraph build_network(const nlohmann::json& document);
NetworkGraph load_network(const std::filesystem::path& path);
nlohmann::json load_json_file(const std::filesystem::path& path);

/// Directional split p(s) = probability that a passenger entering at s
/// travels northbound. 1 at the low terminus, 0.5 at `center`, 0 at the high
/// terminus, piecewise linear in line position in between. On a forked side
/// each station is anchored at the most distant terminus reachable moving
/// away from the centre.
std::map<StationId, double, std::less<>> gravity_weights(const NetworkGraph& graph,
                                                         std::string_view line,
                                                         std::string_view center);

}  // namespace passflow

#include "passflow/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <utility>

#include "passflow/error.hpp"

namespace passflow {
namespace {

constexpr int kSchemaVersion = 1;

std::string require_string(const nlohmann::json& j, const char* field, const std::string& where) {
  if (!j.is_object() || !j.contains(field) || !j.at(field).is_string()) {
    throw Error(ErrorCode::invalid_topology, where + ": missing string field '" + field + "'");
  }
  return j.at(field).get<std::string>();
}

struct LineAdjacency {
  std::map<StationId, std::vector<StationId>, std::less<>> neighbours;
};

LineAdjacency line_adjacency(const std::vector<Edge>& edges, std::string_view line) {
  LineAdjacency adj;
  for (const auto& e : edges) {
    if (e.line != line) continue;
    adj.neighbours[e.from].push_back(e.to);
    adj.neighbours[e.to].push_back(e.from);
  }
  return adj;
}

}  // namespace

std::string_view to_string(Direction direction) {
  return direction == Direction::northbound ? "northbound" : "southbound";
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::boarding: return "boarding";
    case Role::onboard: return "onboard";
    case Role::alighting: return "alighting";
  }
  return "?";
}

Direction parse_direction(std::string_view text) {
  if (text == "northbound") return Direction::northbound;
  if (text == "southbound") return Direction::southbound;
  throw Error(ErrorCode::invalid_topology, "unknown direction '" + std::string(text) + "'");
}

Role parse_role(std::string_view text) {
  if (text == "boarding") return Role::boarding;
  if (text == "onboard") return Role::onboard;
  if (text == "alighting") return Role::alighting;
  throw Error(ErrorCode::unknown_grid_box, "unknown role '" + std::string(text) + "'");
}

std::string to_label(const GridBoxId& box) {
  std::string label = box.edge;
  label += '/';
  label += to_string(box.direction);
  label += '/';
  label += to_string(box.role);
  return label;
}

void to_json(nlohmann::json& j, const GridBoxId& box) {
  j = nlohmann::json{{"edge", box.edge},
                     {"direction", std::string(to_string(box.direction))},
                     {"role", std::string(to_string(box.role))}};
}

void from_json(const nlohmann::json& j, GridBoxId& box) {
  box.edge = j.at("edge").get<std::string>();
  box.direction = parse_direction(j.at("direction").get<std::string>());
  box.role = parse_role(j.at("role").get<std::string>());
}

const LineMembership* Station::membership(std::string_view line) const {
  for (const auto& m : lines) {
    if (m.line == line) return &m;
  }
  return nullptr;
}

bool NetworkGraph::has_station(std::string_view id) const { return station_rank_.contains(id); }
bool NetworkGraph::has_edge(std::string_view id) const { return edge_rank_.contains(id); }

const Station& NetworkGraph::station(std::string_view id) const {
  return stations_[station_rank(id)];
}

const Edge& NetworkGraph::edge(std::string_view id) const { return edges_[edge_rank(id)]; }

const Line& NetworkGraph::line(std::string_view id) const {
  auto it = lines_.find(id);
  if (it == lines_.end()) {
    throw Error(ErrorCode::invalid_topology, "unknown line '" + std::string(id) + "'");
  }
  return it->second;
}

std::size_t NetworkGraph::station_rank(std::string_view id) const {
  auto it = station_rank_.find(id);
  if (it == station_rank_.end()) {
    throw Error(ErrorCode::unknown_station, "unknown station '" + std::string(id) + "'");
  }
  return it->second;
}

std::size_t NetworkGraph::edge_rank(std::string_view id) const {
  auto it = edge_rank_.find(id);
  if (it == edge_rank_.end()) {
    throw Error(ErrorCode::unknown_edge, "unknown edge '" + std::string(id) + "'");
  }
  return it->second;
}

StateIndex NetworkGraph::state_index(const GridBoxId& box) const {
  return state_index(box.edge, box.direction, box.role);
}

StateIndex NetworkGraph::state_index(std::string_view edge, Direction direction, Role role) const {
  auto it = edge_rank_.find(edge);
  if (it == edge_rank_.end()) {
    throw Error(ErrorCode::unknown_grid_box, "no grid box on edge '" + std::string(edge) + "'");
  }
  return 6 * it->second + 3 * static_cast<std::size_t>(direction) + static_cast<std::size_t>(role);
}

GridBoxId NetworkGraph::gridbox_of(StateIndex index) const {
  if (index >= state_size()) {
    throw Error(ErrorCode::unknown_grid_box, "state index " + std::to_string(index) + " out of range");
  }
  GridBoxId box;
  box.edge = edges_[index / 6].id;
  box.direction = static_cast<Direction>((index % 6) / 3);
  box.role = static_cast<Role>(index % 3);
  return box;
}

double NetworkGraph::position(std::string_view station_id, std::string_view line_id) const {
  const auto* m = station(station_id).membership(line_id);
  if (m == nullptr) {
    throw Error(ErrorCode::center_not_on_line,
                "station '" + std::string(station_id) + "' is not on line '" + std::string(line_id) + "'");
  }
  return m->position;
}

const StationId& NetworkGraph::upstream(std::string_view edge_id, Direction direction) const {
  const auto& ends = ends_[edge_rank(edge_id)];
  return direction == Direction::northbound ? ends.low : ends.high;
}

const StationId& NetworkGraph::downstream(std::string_view edge_id, Direction direction) const {
  const auto& ends = ends_[edge_rank(edge_id)];
  return direction == Direction::northbound ? ends.high : ends.low;
}

const std::vector<EdgeDirection>& NetworkGraph::outgoing(std::string_view station_id) const {
  return outgoing_[station_rank(station_id)];
}

const std::vector<EdgeDirection>& NetworkGraph::incoming(std::string_view station_id) const {
  return incoming_[station_rank(station_id)];
}

std::vector<EdgeDirection> NetworkGraph::preceding(const EdgeDirection& ed) const {
  const Edge& current = edge(ed.edge);
  std::vector<EdgeDirection> result;
  for (const auto& in : incoming(upstream(ed.edge, ed.direction))) {
    if (in.direction == ed.direction && in.edge != ed.edge && edge(in.edge).line == current.line) {
      result.push_back(in);
    }
  }
  return result;
}

std::vector<StateIndex> NetworkGraph::boarding_boxes_at(std::string_view station_id) const {
  std::vector<StateIndex> boxes;
  for (const auto& out : outgoing(station_id)) {
    boxes.push_back(state_index(out.edge, out.direction, Role::boarding));
  }
  std::sort(boxes.begin(), boxes.end());
  return boxes;
}

std::vector<StateIndex> NetworkGraph::alighting_boxes_at(std::string_view station_id) const {
  std::vector<StateIndex> boxes;
  for (const auto& in : incoming(station_id)) {
    boxes.push_back(state_index(in.edge, in.direction, Role::alighting));
  }
  std::sort(boxes.begin(), boxes.end());
  return boxes;
}

Direction NetworkGraph::resolve_direction(std::string_view line_id, std::string_view label) const {
  if (label == "northbound") return Direction::northbound;
  if (label == "southbound") return Direction::southbound;
  const Line& l = line(line_id);
  auto it = l.direction_aliases.find(label);
  if (it == l.direction_aliases.end()) {
    throw Error(ErrorCode::invalid_topology, "line '" + std::string(line_id) +
                                                 "' has no direction alias '" + std::string(label) + "'");
  }
  return it->second;
}

NetworkGraph build_network(const nlohmann::json& document) {
  if (!document.is_object()) {
    throw Error(ErrorCode::invalid_topology, "topology document must be a JSON object");
  }
  if (!document.contains("schema") || !document.at("schema").is_number_integer() ||
      document.at("schema").get<int>() != kSchemaVersion) {
    throw Error(ErrorCode::invalid_topology, "topology document must declare \"schema\": 1");
  }

  NetworkGraph g;

  for (const auto& js : document.value("stations", nlohmann::json::array())) {
    Station s;
    s.id = require_string(js, "id", "station");
    s.name = js.value("name", s.id);
    for (const auto& jm : js.value("lines", nlohmann::json::array())) {
      LineMembership m;
      m.line = require_string(jm, "line", "station '" + s.id + "'");
      if (!jm.contains("position") || !jm.at("position").is_number()) {
        throw Error(ErrorCode::invalid_topology, "station '" + s.id + "' has no position on line '" + m.line + "'");
      }
      m.position = jm.at("position").get<double>();
      m.terminus = jm.value("terminus", false);
      if (s.membership(m.line) != nullptr) {
        throw Error(ErrorCode::duplicate_id, "station '" + s.id + "' lists line '" + m.line + "' twice");
      }
      s.lines.push_back(std::move(m));
    }
    g.stations_.push_back(std::move(s));
  }
  std::sort(g.stations_.begin(), g.stations_.end(),
            [](const Station& a, const Station& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < g.stations_.size(); ++i) {
    if (!g.station_rank_.emplace(g.stations_[i].id, i).second) {
      throw Error(ErrorCode::duplicate_id, "duplicate station id '" + g.stations_[i].id + "'");
    }
  }

  std::set<std::tuple<std::string, std::string, std::string>> seen_links;
  for (const auto& je : document.value("edges", nlohmann::json::array())) {
    Edge e;
    e.id = require_string(je, "id", "edge");
    e.from = require_string(je, "from", "edge '" + e.id + "'");
    e.to = require_string(je, "to", "edge '" + e.id + "'");
    e.line = require_string(je, "line", "edge '" + e.id + "'");
    for (const auto* end : {&e.from, &e.to}) {
      if (!g.station_rank_.contains(*end)) {
        throw Error(ErrorCode::dangling_edge_reference,
                    "edge '" + e.id + "' references unknown station '" + *end + "'");
      }
      if (g.stations_[g.station_rank_.at(*end)].membership(e.line) == nullptr) {
        throw Error(ErrorCode::dangling_edge_reference,
                    "edge '" + e.id + "' references station '" + *end + "' which is not on line '" + e.line + "'");
      }
    }
    if (e.from == e.to) {
      throw Error(ErrorCode::invalid_topology, "edge '" + e.id + "' is a self-loop");
    }
    auto key = std::make_tuple(std::min(e.from, e.to), std::max(e.from, e.to), e.line);
    if (!seen_links.insert(key).second) {
      throw Error(ErrorCode::duplicate_id, "edge '" + e.id + "' duplicates an existing (from,to,line) link");
    }
    g.edges_.push_back(std::move(e));
  }
  std::sort(g.edges_.begin(), g.edges_.end(), [](const Edge& a, const Edge& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < g.edges_.size(); ++i) {
    if (!g.edge_rank_.emplace(g.edges_[i].id, i).second) {
      throw Error(ErrorCode::duplicate_id, "duplicate edge id '" + g.edges_[i].id + "'");
    }
  }
  if (g.edges_.empty()) {
    throw Error(ErrorCode::invalid_topology, "topology has no edges");
  }

  // Connectivity over the whole network.
  {
    std::vector<std::vector<std::size_t>> adj(g.stations_.size());
    for (const auto& e : g.edges_) {
      auto a = g.station_rank_.at(e.from);
      auto b = g.station_rank_.at(e.to);
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::vector<bool> seen(g.stations_.size(), false);
    std::queue<std::size_t> frontier;
    frontier.push(0);
    seen[0] = true;
    while (!frontier.empty()) {
      auto cur = frontier.front();
      frontier.pop();
      for (auto next : adj[cur]) {
        if (!seen[next]) {
          seen[next] = true;
          frontier.push(next);
        }
      }
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
      if (!seen[i]) {
        throw Error(ErrorCode::disconnected_graph,
                    "station '" + g.stations_[i].id + "' is not connected to the network");
      }
    }
  }

  // Per-line shape: a path, or a path with exactly one fork, with positions
  // increasing monotonically away from the low termini.
  std::set<LineId> line_ids;
  for (const auto& e : g.edges_) line_ids.insert(e.line);
  for (const auto& s : g.stations_) {
    for (const auto& m : s.lines) {
      if (!line_ids.contains(m.line)) {
        throw Error(ErrorCode::invalid_topology,
                    "station '" + s.id + "' is on line '" + m.line + "' which has no edges");
      }
    }
  }

  for (const auto& line_id : line_ids) {
    Line line;
    line.id = line_id;
    const auto adj = line_adjacency(g.edges_, line_id);
    std::size_t edge_count = 0;
    for (const auto& e : g.edges_) edge_count += (e.line == line_id);

    for (const auto& s : g.stations_) {
      if (s.membership(line_id) != nullptr && !adj.neighbours.contains(s.id)) {
        throw Error(ErrorCode::invalid_topology,
                    "station '" + s.id + "' is on line '" + line_id + "' but no edge of that line reaches it");
      }
    }
    if (edge_count + 1 != adj.neighbours.size()) {
      throw Error(ErrorCode::invalid_topology, "line '" + line_id + "' contains a cycle or is split");
    }
    // A tree with n-1 edges is connected iff it has no cycle; check reachability.
    {
      std::set<StationId> seen{adj.neighbours.begin()->first};
      std::vector<StationId> stack{adj.neighbours.begin()->first};
      while (!stack.empty()) {
        auto cur = stack.back();
        stack.pop_back();
        for (const auto& n : adj.neighbours.at(cur)) {
          if (seen.insert(n).second) stack.push_back(n);
        }
      }
      if (seen.size() != adj.neighbours.size()) {
        throw Error(ErrorCode::invalid_topology, "line '" + line_id + "' contains a cycle or is split");
      }
    }

    for (const auto& [sid, neigh] : adj.neighbours) {
      const auto& st = g.stations_[g.station_rank_.at(sid)];
      const double pos = st.membership(line_id)->position;
      std::size_t lower = 0;
      std::size_t higher = 0;
      for (const auto& n : neigh) {
        const double npos = g.stations_[g.station_rank_.at(n)].membership(line_id)->position;
        if (npos == pos) {
          throw Error(ErrorCode::invalid_topology, "adjacent stations '" + sid + "' and '" + n +
                                                       "' share a position on line '" + line_id + "'");
        }
        (npos < pos ? lower : higher) += 1;
      }
      const std::size_t degree = neigh.size();
      if (degree > 3) {
        throw Error(ErrorCode::invalid_topology, "station '" + sid + "' branches more than once on line '" + line_id + "'");
      }
      if (degree == 3) {
        if (line.fork) {
          throw Error(ErrorCode::invalid_topology, "line '" + line_id + "' has more than one fork");
        }
        if (lower == 0 || higher == 0) {
          throw Error(ErrorCode::invalid_topology, "fork '" + sid + "' on line '" + line_id + "' is not monotone in position");
        }
        line.fork = sid;
      }
      if (degree == 2 && (lower != 1 || higher != 1)) {
        throw Error(ErrorCode::invalid_topology,
                    "station '" + sid + "' is a position extremum inside line '" + line_id + "'");
      }
      const bool is_terminus = degree == 1;
      if (st.membership(line_id)->terminus != is_terminus) {
        throw Error(ErrorCode::invalid_topology, "station '" + sid + "' terminus flag disagrees with line '" +
                                                     line_id + "' structure");
      }
      line.stations.push_back(sid);
      if (is_terminus) line.termini.push_back(sid);
    }
    auto pos_of = [&](const StationId& id) { return g.stations_[g.station_rank_.at(id)].membership(line_id)->position; };
    auto by_position = [&](const StationId& a, const StationId& b) {
      return std::make_pair(pos_of(a), a) < std::make_pair(pos_of(b), b);
    };
    std::sort(line.stations.begin(), line.stations.end(), by_position);
    std::sort(line.termini.begin(), line.termini.end(), by_position);

    // Default centre: station closest to the middle of the position range.
    const double mid = 0.5 * (pos_of(line.stations.front()) + pos_of(line.stations.back()));
    line.center = *std::min_element(line.stations.begin(), line.stations.end(),
                                    [&](const StationId& a, const StationId& b) {
                                      return std::make_pair(std::abs(pos_of(a) - mid), pos_of(a)) <
                                             std::make_pair(std::abs(pos_of(b) - mid), pos_of(b));
                                    });
    g.lines_.emplace(line_id, std::move(line));
  }

  for (const auto& jl : document.value("lines", nlohmann::json::array())) {
    const std::string id = require_string(jl, "id", "line");
    auto it = g.lines_.find(id);
    if (it == g.lines_.end()) {
      throw Error(ErrorCode::invalid_topology, "line '" + id + "' is described but has no edges");
    }
    if (jl.contains("center")) {
      const std::string center = jl.at("center").get<std::string>();
      const auto& st = it->second.stations;
      if (std::find(st.begin(), st.end(), center) == st.end()) {
        throw Error(ErrorCode::center_not_on_line, "centre '" + center + "' is not on line '" + id + "'");
      }
      it->second.center = center;
    }
    const auto aliases = jl.value("direction_aliases", nlohmann::json::object());
    for (const auto& [alias, target] : aliases.items()) {
      it->second.direction_aliases[alias] = parse_direction(target.get<std::string>());
    }
  }

  g.ends_.reserve(g.edges_.size());
  g.outgoing_.resize(g.stations_.size());
  g.incoming_.resize(g.stations_.size());
  for (const auto& e : g.edges_) {
    const double pf = g.stations_[g.station_rank_.at(e.from)].membership(e.line)->position;
    const double pt = g.stations_[g.station_rank_.at(e.to)].membership(e.line)->position;
    NetworkGraph::EdgeEnds ends = pf < pt ? NetworkGraph::EdgeEnds{e.from, e.to} : NetworkGraph::EdgeEnds{e.to, e.from};
    g.outgoing_[g.station_rank_.at(ends.low)].push_back({e.id, Direction::northbound});
    g.incoming_[g.station_rank_.at(ends.high)].push_back({e.id, Direction::northbound});
    g.outgoing_[g.station_rank_.at(ends.high)].push_back({e.id, Direction::southbound});
    g.incoming_[g.station_rank_.at(ends.low)].push_back({e.id, Direction::southbound});
    g.ends_.push_back(std::move(ends));
  }
  for (auto& v : g.outgoing_) std::sort(v.begin(), v.end());
  for (auto& v : g.incoming_) std::sort(v.begin(), v.end());
  return g;
}

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::io_error, "cannot open '" + path.string() + "'");
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::invalid_topology, path.string() + ": " + e.what());
  }
}

NetworkGraph load_network(const std::filesystem::path& path) {
  try {
    return build_network(load_json_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::io_error) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::map<StationId, double, std::less<>> gravity_weights(const NetworkGraph& graph, std::string_view line_id,
                                                         std::string_view center) {
  const Line& line = graph.line(line_id);
  if (std::find(line.stations.begin(), line.stations.end(), center) == line.stations.end()) {
    throw Error(ErrorCode::center_not_on_line,
                "centre '" + std::string(center) + "' is not on line '" + std::string(line_id) + "'");
  }
  const auto adj = line_adjacency(graph.edges(), line_id);
  auto pos = [&](std::string_view s) { return graph.position(s, line_id); };
  const double center_pos = pos(center);

  // Most distant terminus reachable from `start` moving monotonically down
  // (or up) in position.
  auto anchor = [&](const StationId& start, bool downward) {
    double best = pos(start);
    std::vector<StationId> stack{start};
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      const double cp = pos(cur);
      best = downward ? std::min(best, cp) : std::max(best, cp);
      for (const auto& n : adj.neighbours.at(cur)) {
        if (downward ? pos(n) < cp : pos(n) > cp) stack.push_back(n);
      }
    }
    return best;
  };

  std::map<StationId, double, std::less<>> weights;
  for (const auto& s : line.stations) {
    const double x = pos(s);
    double p = 0.5;
    if (x < center_pos) {
      const double lo = anchor(s, true);
      p = 0.5 + 0.5 * (center_pos - x) / (center_pos - lo);
    } else if (x > center_pos) {
      const double hi = anchor(s, false);
      p = 0.5 * (hi - x) / (hi - center_pos);
    }
    weights.emplace(s, std::clamp(p, 0.0, 1.0));
  }
  return weights;
}

}  // namespace passflow

#include "passflow/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "passflow/error.hpp"

namespace passflow::dynamics {
namespace {

using Triplet = Eigen::Triplet<double>;

EdgeDirection parse_edge_direction(const nlohmann::json& j) {
  return {j.at("edge").get<std::string>(), parse_direction(j.at("direction").get<std::string>())};
}

std::string describe(const EdgeDirection& ed) {
  return ed.edge + "/" + std::string(to_string(ed.direction));
}

}  // namespace

std::string_view to_string(EventKind kind) {
  return kind == EventKind::departure ? "departure" : "arrival";
}

EventKind parse_event_kind(std::string_view text) {
  if (text == "departure") return EventKind::departure;
  if (text == "arrival") return EventKind::arrival;
  throw Error(ErrorCode::invalid_event, "unknown event kind '" + std::string(text) + "'");
}

void to_json(nlohmann::json& j, const VehicleEventCount& e) {
  j = nlohmann::json{{"t", e.timestep},
                     {"station", e.station},
                     {"edge", e.edge},
                     {"direction", std::string(passflow::to_string(e.direction))},
                     {"kind", std::string(to_string(e.kind))},
                     {"count", e.count}};
}

void from_json(const nlohmann::json& j, VehicleEventCount& e) {
  e.timestep = j.at("t").get<long>();
  e.station = j.at("station").get<std::string>();
  e.edge = j.at("edge").get<std::string>();
  e.direction = parse_direction(j.at("direction").get<std::string>());
  e.kind = parse_event_kind(j.at("kind").get<std::string>());
  e.count = j.value("count", 1);
}

void TransferTable::set(const NetworkGraph& graph, const EdgeDirection& from, const EdgeDirection& to,
                        double fraction) {
  if (!graph.has_edge(from.edge) || !graph.has_edge(to.edge)) {
    throw Error(ErrorCode::invalid_transfer,
                "transfer " + describe(from) + " -> " + describe(to) + " references an unknown edge");
  }
  const auto& station = graph.downstream(from.edge, from.direction);
  if (graph.upstream(to.edge, to.direction) != station) {
    throw Error(ErrorCode::invalid_transfer, "transfer " + describe(from) + " -> " + describe(to) +
                                                 " does not leave station '" + station + "'");
  }
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::invalid_transfer,
                "transfer " + describe(from) + " -> " + describe(to) + " fraction outside [0, 1]");
  }
  auto& targets = table_[from];
  for (auto& t : targets) {
    if (t.to == to) {
      t.fraction = fraction;
      return;
    }
  }
  targets.push_back({to, fraction});
}

const std::vector<TransferTarget>* TransferTable::targets(const EdgeDirection& from) const {
  auto it = table_.find(from);
  return it == table_.end() ? nullptr : &it->second;
}

std::vector<std::string> TransferTable::problems() const {
  std::vector<std::string> out;
  for (const auto& [from, targets] : table_) {
    double sum = 0.0;
    for (const auto& t : targets) sum += t.fraction;
    if (sum > 1.0 + 1e-12) {
      std::ostringstream msg;
      msg << "transfer fractions out of " << describe(from) << " sum to " << sum;
      out.push_back(msg.str());
    }
  }
  return out;
}

TransferTable parse_transfers(const nlohmann::json& document, const NetworkGraph& graph) {
  TransferTable table;
  const double through = document.value("through_fraction", 0.0);
  if (through > 0.0) {
    for (const auto& e : graph.edges()) {
      for (auto dir : {Direction::northbound, Direction::southbound}) {
        const EdgeDirection from{e.id, dir};
        std::vector<EdgeDirection> next;
        for (const auto& out : graph.outgoing(graph.downstream(e.id, dir))) {
          if (out.direction == dir && graph.edge(out.edge).line == e.line) next.push_back(out);
        }
        for (const auto& to : next) {
          table.set(graph, from, to, through / static_cast<double>(next.size()));
        }
      }
    }
  }
  for (const auto& jt : document.value("transfers", nlohmann::json::array())) {
    try {
      const auto from = parse_edge_direction(jt.at("from"));
      const auto to = parse_edge_direction(jt.at("to"));
      if (jt.contains("station") && jt.at("station").get<std::string>() != graph.downstream(from.edge, from.direction)) {
        throw Error(ErrorCode::invalid_transfer, "transfer " + describe(from) + " is not anchored at station '" +
                                                     jt.at("station").get<std::string>() + "'");
      }
      table.set(graph, from, to, jt.at("fraction").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::invalid_transfer, std::string("malformed transfer entry: ") + e.what());
    }
  }
  return table;
}

ExitWeights parse_exit_weights(const nlohmann::json& document, const NetworkGraph& graph) {
  ExitWeights weights;
  for (const auto& jw : document.value("exit_weights", nlohmann::json::array())) {
    const std::string station = jw.at("station").get<std::string>();
    const EdgeDirection ed = parse_edge_direction(jw);
    const double w = jw.at("weight").get<double>();
    if (graph.downstream(ed.edge, ed.direction) != station || !(w >= 0.0)) {
      throw Error(ErrorCode::invalid_transfer, "exit weight for " + describe(ed) + " at '" + station + "' is invalid");
    }
    weights[station][ed] = w;
  }
  return weights;
}

GravityTable default_gravity(const NetworkGraph& graph) {
  GravityTable table;
  for (const auto& [id, line] : graph.lines()) {
    table.emplace(id, gravity_weights(graph, id, line.center));
  }
  return table;
}

TransitionMatrix build_transition(const NetworkGraph& graph, std::span<const VehicleEventCount> events,
                                  const TransferTable& transfers, std::span<const StateIndex> armed_alighting) {
  const auto n = static_cast<Eigen::Index>(graph.state_size());
  TransitionMatrix result;
  result.timestep = events.empty() ? 0 : events.front().timestep;

  // Columns that differ from identity, keyed by column index.
  std::map<StateIndex, std::vector<std::pair<StateIndex, double>>> moved;
  std::set<EdgeDirection> departing;
  std::set<EdgeDirection> arriving;

  for (const auto& ev : events) {
    if (ev.timestep != result.timestep) {
      throw Error(ErrorCode::mixed_timesteps, "vehicle events from different timesteps in one transition");
    }
    if (!graph.has_edge(ev.edge)) {
      throw Error(ErrorCode::unknown_edge, "vehicle event on unknown edge '" + ev.edge + "'");
    }
    if (ev.count < 0) {
      throw Error(ErrorCode::invalid_event, "negative train count on edge '" + ev.edge + "'");
    }
    const EdgeDirection ed{ev.edge, ev.direction};
    const auto& anchor = ev.kind == EventKind::departure ? graph.upstream(ev.edge, ev.direction)
                                                         : graph.downstream(ev.edge, ev.direction);
    if (ev.station != anchor) {
      throw Error(ErrorCode::invalid_event, std::string(to_string(ev.kind)) + " on " + describe(ed) +
                                                " must be anchored at '" + anchor + "', not '" + ev.station + "'");
    }
    if (ev.count == 0) continue;
    (ev.kind == EventKind::departure ? departing : arriving).insert(ed);
  }

  for (const auto& ed : departing) {
    if (arriving.contains(ed)) {
      throw Error(ErrorCode::conflicting_events, "departure and arrival on " + describe(ed) + " in one sub-step");
    }
    moved[graph.state_index(ed.edge, ed.direction, Role::boarding)] = {
        {graph.state_index(ed.edge, ed.direction, Role::onboard), 1.0}};
  }
  for (const auto& ed : arriving) {
    moved[graph.state_index(ed.edge, ed.direction, Role::onboard)] = {
        {graph.state_index(ed.edge, ed.direction, Role::alighting), 1.0}};
  }
  for (const auto col : armed_alighting) {
    const GridBoxId box = graph.gridbox_of(col);
    if (box.role != Role::alighting) {
      throw Error(ErrorCode::invalid_event, "transfer routing armed on non-alighting box " + to_label(box));
    }
    const auto* targets = transfers.targets({box.edge, box.direction});
    if (targets == nullptr) continue;
    std::vector<std::pair<StateIndex, double>> entries;
    double routed = 0.0;
    for (const auto& t : *targets) {
      if (t.fraction == 0.0) continue;
      entries.emplace_back(graph.state_index(t.to.edge, t.to.direction, Role::boarding), t.fraction);
      routed += t.fraction;
    }
    // A table summing above one cannot be made stochastic; leave the excess
    // visible to validate_transition instead of clipping the routed part.
    const double residual = std::max(0.0, 1.0 - routed);
    if (residual > 0.0) entries.emplace_back(col, residual);
    moved[col] = std::move(entries);
  }

  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(n) + moved.size() * 2);
  for (Eigen::Index j = 0; j < n; ++j) {
    auto it = moved.find(static_cast<StateIndex>(j));
    if (it == moved.end()) {
      triplets.emplace_back(j, j, 1.0);
      continue;
    }
    for (const auto& [row, value] : it->second) {
      triplets.emplace_back(static_cast<Eigen::Index>(row), j, value);
    }
  }
  result.matrix.resize(n, n);
  result.matrix.setFromTriplets(triplets.begin(), triplets.end());
  return result;
}

ControlMatrix build_control_matrix(const NetworkGraph& graph, const GravityTable& gravity,
                                   const TransferTable& transfers, const ExitWeights& exit_weights) {
  const auto n = static_cast<Eigen::Index>(graph.state_size());
  const auto ns = static_cast<Eigen::Index>(graph.station_count());

  // Inflow into each boarding box from the transfer table; used to split
  // entries among the branches leaving a fork.
  std::map<EdgeDirection, double> transfer_inflow;
  for (const auto& [from, targets] : transfers.entries()) {
    for (const auto& t : targets) transfer_inflow[t.to] += t.fraction;
  }

  std::vector<Triplet> triplets;
  for (Eigen::Index r = 0; r < ns; ++r) {
    const Station& st = graph.stations()[static_cast<std::size_t>(r)];
    if (graph.outgoing(st.id).empty()) {
      throw Error(ErrorCode::station_without_outgoing_edge, "station '" + st.id + "' has no outgoing edge");
    }

    const double line_share = 1.0 / static_cast<double>(st.lines.size());
    for (const auto& m : st.lines) {
      std::vector<EdgeDirection> north;
      std::vector<EdgeDirection> south;
      for (const auto& out : graph.outgoing(st.id)) {
        if (graph.edge(out.edge).line != m.line) continue;
        (out.direction == Direction::northbound ? north : south).push_back(out);
      }
      auto line_it = gravity.find(m.line);
      if (line_it == gravity.end() || !line_it->second.contains(st.id)) {
        throw Error(ErrorCode::center_not_on_line,
                    "no gravity weight for station '" + st.id + "' on line '" + m.line + "'");
      }
      const double p = line_it->second.find(st.id)->second;
      double w_north = p;
      double w_south = 1.0 - p;
      if (south.empty()) {
        w_north = 1.0;
        w_south = 0.0;
      } else if (north.empty()) {
        w_north = 0.0;
        w_south = 1.0;
      }
      auto place = [&](const std::vector<EdgeDirection>& boxes, double weight) {
        if (boxes.empty() || weight == 0.0) return;
        double total = 0.0;
        for (const auto& b : boxes) total += transfer_inflow.contains(b) ? transfer_inflow.at(b) : 0.0;
        for (const auto& b : boxes) {
          const double share = total > 0.0 ? (transfer_inflow.contains(b) ? transfer_inflow.at(b) : 0.0) / total
                                            : 1.0 / static_cast<double>(boxes.size());
          if (share == 0.0) continue;
          triplets.emplace_back(static_cast<Eigen::Index>(graph.state_index(b.edge, b.direction, Role::boarding)), r,
                                line_share * weight * share);
        }
      };
      place(north, w_north);
      place(south, w_south);
    }

    const auto& incoming = graph.incoming(st.id);
    std::vector<double> weights;
    double total = 0.0;
    auto station_weights = exit_weights.find(st.id);
    for (const auto& in : incoming) {
      double w = 1.0;
      if (station_weights != exit_weights.end()) {
        auto it = station_weights->second.find(in);
        if (it != station_weights->second.end()) w = it->second;
      }
      weights.push_back(w);
      total += w;
    }
    if (!(total > 0.0)) {
      throw Error(ErrorCode::invalid_transfer, "exit weights at station '" + st.id + "' sum to zero");
    }
    for (std::size_t i = 0; i < incoming.size(); ++i) {
      if (weights[i] == 0.0) continue;
      triplets.emplace_back(
          static_cast<Eigen::Index>(graph.state_index(incoming[i].edge, incoming[i].direction, Role::alighting)),
          ns + r, weights[i] / total);
    }
  }

  ControlMatrix b;
  b.matrix.resize(n, 2 * ns);
  b.matrix.setFromTriplets(triplets.begin(), triplets.end());
  return b;
}

ControlVector build_control_vector(const NetworkGraph& graph, const TurnstileCounts& counts) {
  ControlVector u = ControlVector::Zero(static_cast<Eigen::Index>(2 * graph.station_count()));
  for (const auto& [station, c] : counts) {
    if (!graph.has_station(station)) {
      throw Error(ErrorCode::unknown_station, "turnstile counts for unknown station '" + station + "'");
    }
    if (!(c.entries >= 0.0) || !(c.exits >= 0.0) || !std::isfinite(c.entries) || !std::isfinite(c.exits)) {
      throw Error(ErrorCode::negative_count, "negative or non-finite turnstile count at '" + station + "'");
    }
    u[entry_slot(graph, station)] += c.entries;
    u[exit_slot(graph, station)] -= c.exits;
  }
  return u;
}

ColumnReport audit_columns(const SparseMatrix& m, bool skip_empty) {
  ColumnReport report;
  report.min_coefficient = 0.0;
  for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
    double sum = 0.0;
    bool any = false;
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      if (it.value() != 0.0) any = true;
      sum += it.value();
      report.min_coefficient = std::min(report.min_coefficient, it.value());
    }
    if (!any && skip_empty) continue;
    const double err = std::abs(sum - 1.0);
    if (err > report.max_sum_error || report.worst_column < 0) {
      report.max_sum_error = err;
      report.worst_column = k;
    }
  }
  return report;
}

namespace {

void validate_columns(const SparseMatrix& m, bool skip_empty, double tolerance, const char* what) {
  const ColumnReport r = audit_columns(m, skip_empty);
  if (r.max_sum_error > tolerance || r.min_coefficient < 0.0) {
    std::ostringstream msg;
    msg << what << " is not a valid stochastic matrix: column " << r.worst_column << " sums off by "
        << r.max_sum_error << ", smallest coefficient " << r.min_coefficient;
    throw Error(ErrorCode::invalid_transition, msg.str());
  }
}

}  // namespace

void validate_transition(const TransitionMatrix& f, double tolerance) {
  validate_columns(f.matrix, false, tolerance, "transition matrix");
}

void validate_control(const ControlMatrix& b, double tolerance) {
  validate_columns(b.matrix, true, tolerance, "control matrix");
}

std::string to_coordinate_list(const SparseMatrix& m) {
  std::ostringstream out;
  out.precision(17);
  out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
  for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
    }
  }
  return out.str();
}

}  // namespace passflow::dynamics

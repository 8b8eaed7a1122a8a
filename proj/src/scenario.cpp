#include "passflow/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "passflow/error.hpp"

namespace passflow::scenario {
namespace {

[[noreturn]] void invalid(const std::string& why) { throw Error(ErrorCode::spec_invalid, why); }

double lookup(const std::map<StationId, double, std::less<>>& m, std::string_view key, double fallback) {
  auto it = m.find(key);
  return it == m.end() ? fallback : it->second;
}

std::map<StationId, double, std::less<>> read_station_map(const nlohmann::json& j, std::string_view what) {
  std::map<StationId, double, std::less<>> out;
  if (j.is_null()) return out;
  if (!j.is_object()) invalid(std::string(what) + " must be an object of station -> number");
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) invalid(std::string(what) + " for '" + k + "' must be a number");
    out[k] = v.get<double>();
  }
  return out;
}

struct Route {
  std::vector<StationId> stations;
  std::vector<EdgeDirection> edges;
};

std::vector<EdgeDirection> same_line(const std::vector<EdgeDirection>& candidates, const NetworkGraph& g,
                                     std::string_view line, Direction dir) {
  std::vector<EdgeDirection> out;
  for (const auto& ed : candidates) {
    if (ed.direction == dir && g.edge(ed.edge).line == line) out.push_back(ed);
  }
  return out;
}

void extend_routes(const NetworkGraph& g, const Line& line, Direction dir, Route current, std::vector<Route>& out) {
  const auto next = same_line(g.outgoing(current.stations.back()), g, line.id, dir);
  if (next.empty()) {
    out.push_back(std::move(current));
    return;
  }
  for (const auto& ed : next) {
    Route r = current;
    r.edges.push_back(ed);
    r.stations.push_back(g.downstream(ed.edge, ed.direction));
    extend_routes(g, line, dir, std::move(r), out);
  }
}

std::vector<Route> routes_of(const NetworkGraph& g, const Line& line, Direction dir) {
  std::vector<Route> out;
  for (const auto& s : line.stations) {
    if (same_line(g.incoming(s), g, line.id, dir).empty() && !same_line(g.outgoing(s), g, line.id, dir).empty()) {
      extend_routes(g, line, dir, Route{{s}, {}}, out);
    }
  }
  return out;
}

std::string direction_label(const Line& line, Direction dir) {
  for (const auto& [alias, d] : line.direction_aliases) {
    if (d == dir) return alias;
  }
  return std::string(to_string(dir));
}

std::vector<long> multinomial(long n, std::span<const double> weights, std::mt19937_64& rng) {
  std::vector<long> out(weights.size(), 0);
  double remaining_mass = std::accumulate(weights.begin(), weights.end(), 0.0);
  long remaining = n;
  for (std::size_t i = 0; i + 1 < weights.size() && remaining > 0; ++i) {
    const double p = remaining_mass > 0.0 ? std::clamp(weights[i] / remaining_mass, 0.0, 1.0) : 0.0;
    std::binomial_distribution<long> draw(remaining, p);
    out[i] = draw(rng);
    remaining -= out[i];
    remaining_mass -= weights[i];
  }
  if (!weights.empty()) out.back() += remaining;
  return out;
}

Eigen::VectorXd apply_integer(const dynamics::SparseMatrix& f, const Eigen::VectorXd& x, std::mt19937_64& rng) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  std::vector<Eigen::Index> rows;
  std::vector<double> weights;
  for (Eigen::Index col = 0; col < f.outerSize(); ++col) {
    const long n = std::lround(x[col]);
    if (n == 0) continue;
    rows.clear();
    weights.clear();
    for (dynamics::SparseMatrix::InnerIterator it(f, col); it; ++it) {
      rows.push_back(it.row());
      weights.push_back(it.value());
    }
    const auto parts = multinomial(n, weights, rng);
    for (std::size_t i = 0; i < rows.size(); ++i) y[rows[i]] += static_cast<double>(parts[i]);
  }
  return y;
}

std::vector<BoxFlow> event_flows(const NetworkGraph& g, std::span<const dynamics::VehicleEventCount> events,
                                 const Eigen::VectorXd& before) {
  std::vector<BoxFlow> out;
  for (const auto& ev : events) {
    const bool arrival = ev.kind == dynamics::EventKind::arrival;
    const auto src = g.state_index(ev.edge, ev.direction, arrival ? Role::onboard : Role::boarding);
    out.push_back({ev.station, {ev.edge, ev.direction}, ev.kind, before[static_cast<Eigen::Index>(src)]});
  }
  return out;
}

void validate(const ScenarioSpec& spec, const NetworkGraph& g) {
  if (spec.duration < 1) invalid("duration must be at least one timestep");
  if (spec.dt <= 0) invalid("dt must be positive");
  if (spec.travel_time < 1) invalid("travel_time must be at least one timestep");
  if (spec.dwell < 0) invalid("dwell must be non-negative");
  if (spec.default_entry_rate < 0.0) invalid("default_entry_rate must be non-negative");
  if (spec.initial_load < 0.0) invalid("initial_load must be non-negative");
  if (spec.default_exit_propensity < 0.0 || spec.default_exit_propensity > 1.0) {
    invalid("default_exit_propensity must lie in [0, 1]");
  }
  auto check_stations = [&](const std::map<StationId, double, std::less<>>& m, std::string_view what, double hi) {
    for (const auto& [s, v] : m) {
      if (!g.has_station(s)) invalid(std::string(what) + " names unknown station '" + s + "'");
      if (!(v >= 0.0) || v > hi) invalid(std::string(what) + " for '" + s + "' is out of range");
    }
  };
  check_stations(spec.entry_rate, "entry_rate", std::numeric_limits<double>::infinity());
  check_stations(spec.exit_rate, "exit_rate", std::numeric_limits<double>::infinity());
  check_stations(spec.exit_propensity, "exit_propensity", 1.0);
  for (const auto& s : spec.drop_exits_at) {
    if (!g.has_station(s)) invalid("drop_exits_at names unknown station '" + s + "'");
  }
  const long min_headway = std::max<long>(2, spec.travel_time);
  auto check_headway = [&](long h, const std::string& where) {
    if (h < min_headway) {
      invalid("headway " + std::to_string(h) + " for " + where + " is below " + std::to_string(min_headway) +
              " timesteps (at least 2 and at least the travel time)");
    }
  };
  check_headway(spec.default_headway, "the default");
  for (const auto& h : spec.headways) {
    if (!g.lines().contains(h.line)) invalid("headway names unknown line '" + h.line + "'");
    check_headway(h.headway, "line '" + h.line + "'");
  }
  if (spec.reports.rate < 0.0 || spec.reports.noise < 0.0) invalid("report rate and noise must be non-negative");
  if (!(spec.reports.capacity > 0.0)) invalid("report capacity must be positive");
  const auto& n = spec.noise;
  if (n.q_boarding < 0.0 || n.q_onboard < 0.0 || n.q_alighting < 0.0 || n.sigma0 < 0.0) {
    invalid("noise magnitudes must be non-negative");
  }
}

}  // namespace

std::string_view to_string(ReportPolicy policy) {
  switch (policy) {
    case ReportPolicy::none: return "none";
    case ReportPolicy::uniform_platform: return "uniform_platform";
    case ReportPolicy::full_coverage_counts: return "full_coverage_counts";
    case ReportPolicy::trigger_responsive: return "trigger_responsive";
  }
  return "none";
}

ReportPolicy parse_report_policy(std::string_view text) {
  for (auto p : {ReportPolicy::none, ReportPolicy::uniform_platform, ReportPolicy::full_coverage_counts,
                 ReportPolicy::trigger_responsive}) {
    if (to_string(p) == text) return p;
  }
  invalid("unknown report policy '" + std::string(text) + "'");
}

double ScenarioSpec::entry_rate_at(std::string_view station) const {
  return lookup(entry_rate, station, default_entry_rate);
}
double ScenarioSpec::exit_propensity_at(std::string_view station) const {
  return lookup(exit_propensity, station, default_exit_propensity);
}
double ScenarioSpec::exit_rate_at(std::string_view station) const {
  return lookup(exit_rate, station, entry_rate_at(station));
}
long ScenarioSpec::headway_for(std::string_view line, Direction direction) const {
  for (const auto& h : headways) {
    if (h.line == line && h.direction == direction) return h.headway;
  }
  return default_headway;
}

ScenarioSpec parse_spec(const nlohmann::json& j, const std::filesystem::path& base) {
  if (!j.is_object()) invalid("scenario spec must be a JSON object");
  ScenarioSpec s;
  try {
    if (!j.contains("topology")) invalid("scenario spec needs a \"topology\"");
    const auto& topo = j.at("topology");
    if (topo.is_string()) {
      std::filesystem::path p = topo.get<std::string>();
      if (p.is_relative()) p = base / p;
      s.topology = load_json_file(p);
    } else {
      s.topology = topo;
    }
    s.duration = j.value("duration", s.duration);
    s.seed = j.value("seed", s.seed);
    s.dt = j.value("dt", s.dt);
    if (j.contains("start")) {
      const auto start = ingest::parse_timestamp(j.at("start").get<std::string>());
      if (!start) invalid("\"start\" is not an ISO-8601 timestamp");
      s.start = *start;
    } else {
      s.start = *ingest::parse_timestamp("2014-02-25T05:00:00");
    }
    const std::string mode = j.value("mode", std::string("integer"));
    if (mode == "integer") {
      s.mode = TruthMode::integer;
    } else if (mode == "gaussian") {
      s.mode = TruthMode::gaussian;
    } else {
      invalid("mode must be \"integer\" or \"gaussian\"");
    }

    const auto demand = j.value("demand", nlohmann::json::object());
    s.entry_rate = read_station_map(demand.value("entry_rates", nlohmann::json()), "entry_rates");
    s.exit_propensity = read_station_map(demand.value("exit_propensity", nlohmann::json()), "exit_propensity");
    s.exit_rate = read_station_map(demand.value("exit_rates", nlohmann::json()), "exit_rates");
    s.default_entry_rate = demand.value("default_entry_rate", s.default_entry_rate);
    s.default_exit_propensity = demand.value("default_exit_propensity", s.default_exit_propensity);
    s.initial_load = demand.value("initial_load", s.initial_load);

    const auto trains = j.value("trains", nlohmann::json::object());
    s.travel_time = trains.value("travel_time", s.travel_time);
    s.dwell = trains.value("dwell", s.dwell);
    s.default_headway = trains.value("default_headway", s.default_headway);
    for (const auto& h : trains.value("headways", nlohmann::json::array())) {
      s.headways.push_back({h.at("line").get<std::string>(), parse_direction(h.at("direction").get<std::string>()),
                            h.at("headway").get<long>(), h.value("offset", 0L)});
    }

    const auto reports = j.value("reports", nlohmann::json::object());
    s.reports.policy = parse_report_policy(reports.value("policy", std::string("uniform_platform")));
    s.reports.rate = reports.value("rate", s.reports.rate);
    s.reports.noise = reports.value("noise", s.reports.noise);
    s.reports.capacity = reports.value("capacity", s.reports.capacity);

    const auto noise = j.value("noise", nlohmann::json::object());
    s.noise.q_boarding = noise.value("q_boarding", s.noise.q_boarding);
    s.noise.q_onboard = noise.value("q_onboard", s.noise.q_onboard);
    s.noise.q_alighting = noise.value("q_alighting", s.noise.q_alighting);
    s.noise.sigma0 = noise.value("sigma0", s.noise.sigma0);

    s.drop_exits_at = j.value("drop_exits_at", std::vector<StationId>{});
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("malformed scenario spec: ") + e.what());
  }
  return s;
}

ScenarioSpec load_spec(const std::filesystem::path& path) {
  return parse_spec(load_json_file(path), path.parent_path());
}

nlohmann::json to_json(const ScenarioSpec& s) {
  nlohmann::json headways = nlohmann::json::array();
  for (const auto& h : s.headways) {
    headways.push_back({{"line", h.line},
                        {"direction", std::string(to_string(h.direction))},
                        {"headway", h.headway},
                        {"offset", h.offset}});
  }
  return {{"topology", s.topology},
          {"duration", s.duration},
          {"seed", s.seed},
          {"dt", s.dt},
          {"start", ingest::format_timestamp(s.start)},
          {"mode", s.mode == TruthMode::integer ? "integer" : "gaussian"},
          {"demand",
           {{"entry_rates", s.entry_rate},
            {"exit_propensity", s.exit_propensity},
            {"exit_rates", s.exit_rate},
            {"default_entry_rate", s.default_entry_rate},
            {"default_exit_propensity", s.default_exit_propensity},
            {"initial_load", s.initial_load}}},
          {"trains",
           {{"travel_time", s.travel_time},
            {"dwell", s.dwell},
            {"default_headway", s.default_headway},
            {"headways", headways}}},
          {"reports",
           {{"policy", std::string(to_string(s.reports.policy))},
            {"rate", s.reports.rate},
            {"noise", s.reports.noise},
            {"capacity", s.reports.capacity}}},
          {"noise",
           {{"q_boarding", s.noise.q_boarding},
            {"q_onboard", s.noise.q_onboard},
            {"q_alighting", s.noise.q_alighting},
            {"sigma0", s.noise.sigma0}}},
          {"drop_exits_at", s.drop_exits_at}};
}

std::vector<ScheduledEvent> build_schedule(const NetworkGraph& g, const ScenarioSpec& spec) {
  std::vector<ScheduledEvent> out;
  const long cycle = spec.travel_time + spec.dwell;
  for (const auto& [line_id, line] : g.lines()) {
    for (auto dir : {Direction::northbound, Direction::southbound}) {
      const auto routes = routes_of(g, line, dir);
      if (routes.empty()) continue;
      const long h = spec.headway_for(line_id, dir);
      long offset = 0;
      for (const auto& hw : spec.headways) {
        if (hw.line == line_id && hw.direction == dir) offset = hw.offset;
      }
      const auto count = static_cast<long>(routes.size());
      long longest = 0;
      for (const auto& r : routes) longest = std::max(longest, static_cast<long>(r.stations.size()));
      const long n_first = (-offset - longest * cycle) / h - 2;
      const long n_last = (spec.duration - offset + longest * cycle) / h + 2;
      for (long n = n_first; n <= n_last; ++n) {
        const auto& route = routes[static_cast<std::size_t>(((n % count) + count) % count)];
        long ref = 0;
        if (line.fork) {
          auto it = std::find(route.stations.begin(), route.stations.end(), *line.fork);
          if (it != route.stations.end()) ref = it - route.stations.begin();
        }
        const std::string vehicle = line_id + "/" + std::string(to_string(dir)) + "/" + std::to_string(n);
        for (std::size_t i = 0; i < route.edges.size(); ++i) {
          const long depart = n * h + offset + (static_cast<long>(i) - ref) * cycle;
          const long arrive = depart + spec.travel_time;
          const auto& ed = route.edges[i];
          if (depart >= 0 && depart < spec.duration) {
            out.push_back({{depart, route.stations[i], ed.edge, ed.direction, dynamics::EventKind::departure, 1},
                           line_id, vehicle, 40});
          }
          if (arrive >= 0 && arrive < spec.duration) {
            out.push_back({{arrive, route.stations[i + 1], ed.edge, ed.direction, dynamics::EventKind::arrival, 1},
                           line_id, vehicle, 10});
          }
        }
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ScheduledEvent& a, const ScheduledEvent& b) {
    return std::tie(a.event.timestep, a.offset) < std::tie(b.event.timestep, b.offset);
  });
  return out;
}

Truth generate_truth(const ScenarioSpec& spec) {
  Truth truth;
  std::shared_ptr<const NetworkModel> model;
  try {
    model = std::make_shared<const NetworkModel>(NetworkModel::from_document(spec.topology));
  } catch (const Error& e) {
    invalid(std::string("scenario topology is invalid: ") + e.what());
  }
  truth.model = model;
  const NetworkGraph& g = *model->graph;
  validate(spec, g);

  std::mt19937_64 rng(spec.seed);
  const auto n = static_cast<Eigen::Index>(g.state_size());
  const bool gaussian = spec.mode == TruthMode::gaussian;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::normal_distribution<double> unit(0.0, 1.0);
  if (gaussian) {
    for (Eigen::Index i = 0; i < n; ++i) x[i] = spec.noise.sigma0 * unit(rng);
  } else if (spec.initial_load > 0.0) {
    std::poisson_distribution<long> load(spec.initial_load);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = static_cast<double>(load(rng));
  }
  const Eigen::VectorXd q_sd = filter::process_noise(g, spec.noise).cwiseSqrt();
  auto add_process_noise = [&](Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < n; ++i) v[i] += q_sd[i] * unit(rng);
  };
  truth.states.push_back(x);

  const auto schedule = build_schedule(g, spec);
  std::vector<std::vector<dynamics::VehicleEventCount>> per_step(static_cast<std::size_t>(spec.duration));
  for (const auto& se : schedule) {
    auto& bucket = per_step[static_cast<std::size_t>(se.event.timestep)];
    auto it = std::find_if(bucket.begin(), bucket.end(), [&](const dynamics::VehicleEventCount& e) {
      return e.edge == se.event.edge && e.direction == se.event.direction && e.kind == se.event.kind;
    });
    if (it == bucket.end()) {
      bucket.push_back(se.event);
    } else {
      ++it->count;
    }
  }

  const std::set<StationId, std::less<>> dropped(spec.drop_exits_at.begin(), spec.drop_exits_at.end());
  std::ostringstream turnstile;
  turnstile << "timestamp,station,entries,exits\n";

  for (long k = 0; k < spec.duration; ++k) {
    const auto& events = per_step[static_cast<std::size_t>(k)];
    std::vector<dynamics::VehicleEventCount> arrivals;
    std::vector<dynamics::VehicleEventCount> departures;
    for (const auto& ev : events) (ev.kind == dynamics::EventKind::arrival ? arrivals : departures).push_back(ev);

    std::vector<BoxFlow> flows = event_flows(g, arrivals, x);
    const auto f_arrive = dynamics::build_transition(g, arrivals, model->transfers);
    dynamics::TurnstileCounts counts;

    if (gaussian) {
      for (const auto& st : g.stations()) {
        std::poisson_distribution<long> entries(spec.entry_rate_at(st.id));
        std::poisson_distribution<long> exits(spec.exit_rate_at(st.id));
        counts[st.id] = {static_cast<double>(entries(rng)), static_cast<double>(exits(rng))};
      }
      x = f_arrive.matrix * x + model->control.matrix * dynamics::build_control_vector(g, counts);
      add_process_noise(x);
    } else {
      x = apply_integer(f_arrive.matrix, x, rng);
      for (const auto& st : g.stations()) {
        std::poisson_distribution<long> entries(spec.entry_rate_at(st.id));
        const long entered = entries(rng);
        const Eigen::Index col = dynamics::entry_slot(g, st.id);
        std::vector<Eigen::Index> rows;
        std::vector<double> weights;
        for (dynamics::SparseMatrix::InnerIterator it(model->control.matrix, col); it; ++it) {
          rows.push_back(it.row());
          weights.push_back(it.value());
        }
        const auto parts = multinomial(entered, weights, rng);
        for (std::size_t i = 0; i < rows.size(); ++i) x[rows[i]] += static_cast<double>(parts[i]);

        long exited = 0;
        const double propensity = spec.exit_propensity_at(st.id);
        for (const auto box : g.alighting_boxes_at(st.id)) {
          const auto b = static_cast<Eigen::Index>(box);
          std::binomial_distribution<long> leave(std::lround(x[b]), propensity);
          const long e = leave(rng);
          x[b] -= static_cast<double>(e);
          exited += e;
        }
        counts[st.id] = {static_cast<double>(entered), static_cast<double>(exited)};
      }
    }

    const auto armed = armed_boxes(g, arrivals);
    const auto departing = event_flows(g, departures, x);
    flows.insert(flows.end(), departing.begin(), departing.end());
    const auto f_depart = dynamics::build_transition(g, departures, model->transfers, armed);
    if (gaussian) {
      x = f_depart.matrix * x;
      add_process_noise(x);
    } else {
      x = apply_integer(f_depart.matrix, x, rng);
    }

    for (const auto& [station, c] : counts) {
      truth.total_entries += c.entries;
      truth.total_exits += c.exits;
      const double reported_exits = dropped.contains(station) ? 0.0 : c.exits;
      turnstile << ingest::format_timestamp(spec.start + k * spec.dt) << ',' << station << ','
                << std::llround(c.entries) << ',' << std::llround(reported_exits) << '\n';
    }
    truth.states.push_back(x);
    truth.events.push_back(events);
    truth.counts.push_back(std::move(counts));
    truth.flows.push_back(std::move(flows));
  }
  truth.turnstile_csv = turnstile.str();

  std::ostringstream trains;
  trains << "timestamp,station,line,direction,event,vehicle_id\n";
  for (const auto& se : schedule) {
    trains << ingest::format_timestamp(spec.start + se.event.timestep * spec.dt + se.offset) << ','
           << se.event.station << ',' << se.line << ',' << direction_label(g.line(se.line), se.event.direction)
           << ',' << dynamics::to_string(se.event.kind) << ',' << se.vehicle << '\n';
  }
  truth.events_csv = trains.str();
  return truth;
}

std::map<StationId, std::map<long, double>> terminus_arrivals(const Truth& truth, long steps_per_bin) {
  std::map<StationId, std::map<long, double>> out;
  const auto& g = *truth.model->graph;
  for (std::size_t k = 0; k < truth.flows.size(); ++k) {
    for (const auto& f : truth.flows[k]) {
      if (f.kind != dynamics::EventKind::arrival) continue;
      const auto& st = g.station(f.station);
      if (std::none_of(st.lines.begin(), st.lines.end(), [](const LineMembership& m) { return m.terminus; })) {
        continue;
      }
      out[f.station][static_cast<long>(k) / steps_per_bin] += f.mass;
    }
  }
  return out;
}

double rmse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  if (estimate.size() != truth.size() || truth.size() == 0) {
    throw Error(ErrorCode::dimension_mismatch, "RMSE needs two vectors of equal, nonzero length");
  }
  return std::sqrt((estimate - truth).squaredNorm() / static_cast<double>(truth.size()));
}

double TwinResult::mean_rmse_open() const {
  return rmse_open.empty() ? 0.0 : std::accumulate(rmse_open.begin(), rmse_open.end(), 0.0) / rmse_open.size();
}

double TwinResult::mean_rmse_assimilated() const {
  return rmse_assimilated.empty()
             ? 0.0
             : std::accumulate(rmse_assimilated.begin(), rmse_assimilated.end(), 0.0) / rmse_assimilated.size();
}

namespace {

double platform_count(const NetworkGraph& g, const Eigen::VectorXd& x, std::string_view station) {
  double sum = 0.0;
  for (auto b : g.boarding_boxes_at(station)) sum += x[static_cast<Eigen::Index>(b)];
  return sum;
}

class ReportGenerator {
 public:
  ReportGenerator(const ScenarioSpec& spec, const NetworkGraph& graph, const observation::LevelMapping& levels)
      : spec_(spec), g_(graph), levels_(levels), rng_(spec.seed ^ 0x9e3779b97f4a7c15ULL) {}

  void fill(ingest::TimestepInputs& in, const Eigen::VectorXd& truth,
            std::span<const feedback::FeedbackRequest> requests) {
    switch (spec_.reports.policy) {
      case ReportPolicy::none: break;
      case ReportPolicy::uniform_platform: {
        std::uniform_int_distribution<std::size_t> pick(0, g_.station_count() - 1);
        const auto reports = std::lround(spec_.reports.rate);
        for (long r = 0; r < reports; ++r) {
          const auto& station = g_.stations()[pick(rng_)].id;
          add(in, observation::PlatformLocation{station}, platform_count(g_, truth, station), {});
        }
        break;
      }
      case ReportPolicy::full_coverage_counts:
        for (Eigen::Index i = 0; i < truth.size(); ++i) {
          observation::CountMeasurement m;
          m.timestep = in.timestep;
          m.location = observation::BoxLocation{g_.gridbox_of(static_cast<StateIndex>(i))};
          m.value = truth[i] + noise();
          m.variance = variance();
          m.source = "synthetic";
          in.measurements.push_back(std::move(m));
        }
        break;
      case ReportPolicy::trigger_responsive:
        for (const auto& req : requests) {
          if (const auto* box = std::get_if<GridBoxId>(&req.target)) {
            const auto idx = static_cast<Eigen::Index>(g_.state_index(*box));
            if (spec_.mode == TruthMode::integer) {
              add(in, observation::OnboardLocation{box->edge, box->direction, 0}, truth[idx], req.id);
            } else {
              add(in, observation::BoxLocation{*box}, truth[idx], req.id);
            }
          } else {
            const auto& station = std::get<StationId>(req.target);
            add(in, observation::PlatformLocation{station}, platform_count(g_, truth, station), req.id);
          }
        }
        break;
    }
  }

 private:
  double noise() { return spec_.reports.noise > 0.0 ? spec_.reports.noise * unit_(rng_) : 0.0; }
  double variance() const { return std::max(spec_.reports.noise * spec_.reports.noise, 1e-6); }

  // Integer truth is reported on the six-level scale; gaussian truth as counts.
  void add(ingest::TimestepInputs& in, observation::Location loc, double value,
           std::optional<std::string> request_id) {
    const double noisy = value + noise();
    if (spec_.mode == TruthMode::integer) {
      observation::CrowdednessReport r;
      r.timestep = in.timestep;
      r.location = std::move(loc);
      r.level = levels_.nearest_level(noisy);
      r.reporter = "synthetic";
      r.request_id = std::move(request_id);
      in.reports.push_back(std::move(r));
    } else {
      observation::CountMeasurement m;
      m.timestep = in.timestep;
      m.location = std::move(loc);
      m.value = noisy;
      m.variance = variance();
      m.source = request_id.value_or("synthetic");
      in.measurements.push_back(std::move(m));
    }
  }

  const ScenarioSpec& spec_;
  const NetworkGraph& g_;
  const observation::LevelMapping& levels_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> unit_{0.0, 1.0};
};

}  // namespace

TwinResult run_twin(const ScenarioSpec& spec) {
  const Truth truth = generate_truth(spec);
  const auto& model = truth.model;
  const NetworkGraph& g = *model->graph;

  std::istringstream turnstile_in(truth.turnstile_csv);
  std::istringstream trains_in(truth.events_csv);
  const auto turnstile = ingest::parse_turnstile(turnstile_in, &g, "turnstile.csv");
  const auto trains = ingest::parse_train_records(trains_in, "events.csv");
  const ingest::Clock clock{spec.start, spec.dt};
  const auto events = ingest::aggregate_vehicle_events(trains.records, g, clock);
  const auto inputs = ingest::assemble_inputs(g, turnstile.records, events, {}, clock);
  if (static_cast<long>(inputs.size()) != spec.duration || inputs.front().timestep != 0) {
    invalid("ingested window does not match the scenario duration");
  }

  ModelConfig config;
  config.noise = spec.noise;
  config.levels = observation::LevelMapping::with_capacity(spec.reports.capacity);
  ModelConfig open_config = config;
  open_config.assimilate = false;

  Simulation open(model, open_config);
  Simulation assim(model, config);
  if (spec.mode == TruthMode::gaussian) {
    // Same prior mean for both arms; the truth's initial state is drawn around it.
    open.reset_state(filter::initial_state(g, spec.noise));
    assim.reset_state(filter::initial_state(g, spec.noise));
  }

  ReportGenerator reports(spec, g, config.levels);
  std::vector<feedback::FeedbackRequest> pending;

  TwinResult result;
  result.truth.push_back(truth.states.front());
  result.open_loop.push_back(open.state().x);
  result.assimilated.push_back(assim.state().x);
  for (long k = 0; k < spec.duration; ++k) {
    const auto& truth_after = truth.states[static_cast<std::size_t>(k + 1)];
    ingest::TimestepInputs in = inputs[static_cast<std::size_t>(k)];
    std::erase_if(pending, [&](const feedback::FeedbackRequest& r) { return r.expires_at() < k; });
    reports.fill(in, truth_after, pending);
    result.requests_answered += spec.reports.policy == ReportPolicy::trigger_responsive ? pending.size() : 0;
    pending.clear();

    open.step(inputs[static_cast<std::size_t>(k)]);
    const auto step = assim.step(in);
    if (step.updated && step.diagnostics.nis) {
      result.nis.push_back(*step.diagnostics.nis);
      result.update_sizes.push_back(static_cast<std::size_t>(step.diagnostics.innovation.size()));
    }
    result.requests_emitted += step.requests.size();
    pending = step.requests;

    result.truth.push_back(truth_after);
    result.open_loop.push_back(open.state().x);
    result.assimilated.push_back(assim.state().x);
    result.rmse_open.push_back(rmse(open.state().x, truth_after));
    result.rmse_assimilated.push_back(rmse(assim.state().x, truth_after));
  }
  return result;
}

PairedTest paired_one_sided_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorCode::dimension_mismatch, "paired test needs two samples of equal size >= 2");
  }
  const auto n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  PairedTest out;
  out.mean_difference = mean;
  if (sd == 0.0) {
    out.t_statistic = mean > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    out.p_value = mean > 0.0 ? 0.0 : 1.0;
    return out;
  }
  out.t_statistic = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(n - 1.0);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.t_statistic));
  return out;
}

nlohmann::json random_topology(std::mt19937_64& rng, int max_stations) {
  if (max_stations < 2) invalid("random topology needs at least two stations");
  std::uniform_int_distribution<int> station_count(2, max_stations);
  std::bernoulli_distribution coin(0.5);
  const int total = station_count(rng);

  nlohmann::json stations = nlohmann::json::array();
  nlohmann::json edges = nlohmann::json::array();
  int next_edge = 0;
  auto station_name = [](int i) { return "s" + std::to_string(i); };
  auto add_edge = [&](const std::string& a, const std::string& b, const std::string& line) {
    edges.push_back({{"id", "e" + std::to_string(next_edge++)}, {"from", a}, {"to", b}, {"line", line}});
  };
  // station id -> memberships
  std::map<std::string, nlohmann::json> members;
  auto join = [&](const std::string& s, const std::string& line, double pos, bool terminus) {
    members[s].push_back({{"line", line}, {"position", pos}, {"terminus", terminus}});
  };

  // Split stations between the first line (trunk plus optional branches) and
  // an optional crossing line.
  int crossing = 0;
  if (total >= 4 && coin(rng)) crossing = std::uniform_int_distribution<int>(1, std::min(3, total - 3))(rng);
  const int first = total - crossing;
  int branch_a = 0;
  int branch_b = 0;
  int trunk = first;
  if (first >= 4 && coin(rng)) {
    branch_b = 1;
    branch_a = std::uniform_int_distribution<int>(1, first - 3)(rng);
    trunk = first - branch_a - branch_b;
  }
  int id = 0;
  std::vector<std::string> trunk_ids;
  for (int i = 0; i < trunk; ++i) {
    trunk_ids.push_back(station_name(id++));
    const bool fork_here = branch_a > 0 && i == trunk - 1;
    join(trunk_ids.back(), "L1", i, i == 0 || (i == trunk - 1 && !fork_here));
    if (i > 0) add_edge(trunk_ids[static_cast<std::size_t>(i - 1)], trunk_ids.back(), "L1");
  }
  for (int len : {branch_a, branch_b}) {
    std::string prev = trunk_ids.back();
    for (int i = 0; i < len; ++i) {
      const std::string s = station_name(id++);
      join(s, "L1", trunk + i, i == len - 1);
      add_edge(prev, s, "L1");
      prev = s;
    }
  }
  nlohmann::json lines = nlohmann::json::array();
  nlohmann::json transfers = nlohmann::json::array();
  const double through = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (crossing > 0) {
    const std::string shared =
        trunk_ids[std::uniform_int_distribution<std::size_t>(0, trunk_ids.size() - 1)(rng)];
    std::vector<std::string> l2;
    for (int i = 0; i < crossing; ++i) l2.push_back(station_name(id++));
    l2.insert(l2.begin() + (crossing >= 2 ? 1 : 0), shared);
    for (std::size_t i = 0; i < l2.size(); ++i) {
      join(l2[i], "L2", static_cast<double>(i), i == 0 || i + 1 == l2.size());
      if (i > 0) add_edge(l2[i - 1], l2[i], "L2");
    }
    lines.push_back({{"id", "L2"}, {"direction_aliases", {{"outbound", "northbound"}, {"inbound", "southbound"}}}});
    // Route part of the remainder across lines in both directions.
    transfers.push_back({{"shared", shared}, {"fraction", 0.5 * (1.0 - through)}});
  }
  for (auto& [s, m] : members) stations.push_back({{"id", s}, {"lines", m}});
  nlohmann::json doc{{"schema", 1}, {"stations", stations}, {"edges", edges}, {"through_fraction", through}};
  if (!lines.empty()) doc["lines"] = lines;

  if (!transfers.empty()) {
    const auto graph = build_network(doc);
    const std::string shared = transfers.front().at("shared").get<std::string>();
    const double fraction = transfers.front().at("fraction").get<double>();
    nlohmann::json explicit_transfers = nlohmann::json::array();
    for (const auto& in : graph.incoming(shared)) {
      std::vector<EdgeDirection> targets;
      for (const auto& out : graph.outgoing(shared)) {
        if (graph.edge(out.edge).line != graph.edge(in.edge).line) targets.push_back(out);
      }
      for (const auto& t : targets) {
        explicit_transfers.push_back(
            {{"from", {{"edge", in.edge}, {"direction", std::string(to_string(in.direction))}}},
             {"to", {{"edge", t.edge}, {"direction", std::string(to_string(t.direction))}}},
             {"fraction", fraction / static_cast<double>(targets.size())}});
      }
    }
    doc["transfers"] = explicit_transfers;
  }
  return doc;
}

}  // namespace passflow::scenario

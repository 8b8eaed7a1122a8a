#include "passflow/simulation.hpp"

#include <algorithm>

#include "passflow/error.hpp"

namespace passflow {

NetworkModel NetworkModel::from_document(const nlohmann::json& document) {
  NetworkModel m;
  auto graph = std::make_shared<NetworkGraph>(build_network(document));
  m.transfers = dynamics::parse_transfers(document, *graph);
  m.exit_weights = dynamics::parse_exit_weights(document, *graph);
  m.gravity = dynamics::default_gravity(*graph);
  m.control = dynamics::build_control_matrix(*graph, m.gravity, m.transfers, m.exit_weights);
  m.graph = std::move(graph);
  return m;
}

NetworkModel NetworkModel::load(const std::filesystem::path& path) {
  const auto document = load_json_file(path);
  try {
    return from_document(document);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string_view to_string(Phase phase) { return phase == Phase::arrival ? "arrival" : "departure"; }

std::vector<StateIndex> armed_boxes(const NetworkGraph& graph, std::span<const dynamics::VehicleEventCount> arrivals) {
  std::vector<StateIndex> out;
  for (const auto& ev : arrivals) {
    if (ev.kind == dynamics::EventKind::arrival && ev.count > 0) {
      out.push_back(graph.state_index(ev.edge, ev.direction, Role::alighting));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Simulation::Simulation(std::shared_ptr<const NetworkModel> model, ModelConfig config)
    : model_(std::move(model)),
      config_(std::move(config)),
      q_(filter::process_noise(*model_->graph, config_.noise)),
      state_(filter::initial_state(*model_->graph, config_.noise)),
      scanner_(config_.thresholds) {}

namespace {

std::vector<BoxFlow> flows_of(const NetworkGraph& graph, std::span<const dynamics::VehicleEventCount> events,
                              const Eigen::VectorXd& before) {
  std::vector<BoxFlow> flows;
  for (const auto& ev : events) {
    if (ev.count == 0) continue;
    const bool arrival = ev.kind == dynamics::EventKind::arrival;
    const auto source = graph.state_index(ev.edge, ev.direction, arrival ? Role::onboard : Role::boarding);
    flows.push_back({ev.station, {ev.edge, ev.direction}, ev.kind, before[static_cast<Eigen::Index>(source)]});
  }
  return flows;
}

void fill_record(SubstepRecord& rec, const filter::FilterState& s) {
  rec.substep = s.substep;
  rec.mean = s.x;
  rec.variance = s.p.diagonal();
  rec.trace_p = s.p.trace();
}

}  // namespace

StepResult Simulation::step(const ingest::TimestepInputs& inputs) {
  const NetworkGraph& g = graph();
  std::vector<dynamics::VehicleEventCount> arrivals;
  std::vector<dynamics::VehicleEventCount> departures;
  for (const auto& ev : inputs.events) {
    (ev.kind == dynamics::EventKind::arrival ? arrivals : departures).push_back(ev);
  }

  StepResult result;
  result.timestep = inputs.timestep;

  const dynamics::ControlVector u = dynamics::build_control_vector(g, inputs.counts);
  const dynamics::ControlVector zero = dynamics::ControlVector::Zero(u.size());

  // Arrival sub-step carries the whole minute of turnstile counts.
  const auto f_arrive = dynamics::build_transition(g, arrivals, model_->transfers);
  auto& rec_a = result.substeps[0];
  rec_a.phase = Phase::arrival;
  rec_a.flows = flows_of(g, arrivals, state_.x);
  auto pa = filter::predict(state_, f_arrive, model_->control, u, q_);
  pa.state.pending_transfer_flags = armed_boxes(g, arrivals);
  rec_a.conservation_residual = pa.conservation_residual;
  rec_a.transition_column_error = pa.transition_column_error;
  fill_record(rec_a, pa.state);

  const auto f_depart = dynamics::build_transition(g, departures, model_->transfers, pa.state.pending_transfer_flags);
  auto& rec_d = result.substeps[1];
  rec_d.phase = Phase::departure;
  rec_d.flows = flows_of(g, departures, pa.state.x);
  auto pd = filter::predict(pa.state, f_depart, model_->control, zero, q_);
  pd.state.pending_transfer_flags.clear();
  rec_d.conservation_residual = pd.conservation_residual;
  rec_d.transition_column_error = pd.transition_column_error;

  filter::FilterState next = std::move(pd.state);
  if (config_.assimilate && inputs.has_measurements()) {
    const auto batch = observation::build_observation(inputs.reports, g, config_.levels, inputs.measurements);
    auto up = filter::update(next, batch);
    next = std::move(up.state);
    result.diagnostics = std::move(up.diagnostics);
    result.updated = true;
  }
  next.timestep = inputs.timestep + 1;
  fill_record(rec_d, next);

  result.diagnostics.trace_p = next.p.trace();
  result.diagnostics.conservation_residual = pa.conservation_residual + pd.conservation_residual;
  result.diagnostics.transition_column_error = std::max(pa.transition_column_error, pd.transition_column_error);

  state_ = std::move(next);
  result.requests = scanner_.scan(g, state_);
  return result;
}

}  // namespace passflow

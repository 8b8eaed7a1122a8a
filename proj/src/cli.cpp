#include "passflow/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "passflow/error.hpp"
#include "passflow/export.hpp"
#include "passflow/ingest.hpp"
#include "passflow/scenario.hpp"
#include "passflow/service.hpp"
#include "passflow/simulation.hpp"

namespace passflow::cli {
namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io_error, "cannot write '" + path.string() + "'");
  return f;
}

void print_warnings(std::ostream& err, const std::string& source, const std::vector<ingest::Warning>& warnings) {
  for (const auto& w : warnings) {
    err << "warning: " << source;
    if (w.line > 0) err << ':' << w.line;
    err << ": " << w.message << '\n';
  }
}

struct LoadedInputs {
  std::shared_ptr<const NetworkModel> model;
  std::vector<ingest::TimestepInputs> steps;
  ingest::Clock clock;
};

void require_path(const std::filesystem::path& p, std::string_view flag) {
  if (p.empty()) throw Error(ErrorCode::io_error, "missing required " + std::string(flag));
}

// Reads topology plus whatever data files are configured. Any failure here is
// an input error.
LoadedInputs load_inputs(const RunConfig& cfg, std::ostream& err, bool need_data) {
  require_path(cfg.topology, "--topology");
  if (cfg.dt <= 0) throw Error(ErrorCode::spec_invalid, "--dt must be positive");
  LoadedInputs li;
  li.model = std::make_shared<const NetworkModel>(NetworkModel::load(cfg.topology));
  const NetworkGraph& g = *li.model->graph;
  if (need_data) {
    require_path(cfg.turnstile, "--turnstile");
    require_path(cfg.events, "--events");
  }
  ingest::Parsed<ingest::TurnstileRecord> turnstile;
  ingest::Parsed<ingest::RawTrainRecord> trains;
  ingest::Parsed<ingest::ReportRecord> reports;
  if (!cfg.turnstile.empty()) {
    turnstile = ingest::parse_turnstile_file(cfg.turnstile, &g);
    print_warnings(err, cfg.turnstile.string(), turnstile.warnings);
  }
  if (!cfg.events.empty()) {
    trains = ingest::parse_train_records_file(cfg.events);
    print_warnings(err, cfg.events.string(), trains.warnings);
  }
  if (!cfg.reports.empty()) {
    reports = ingest::parse_reports_file(cfg.reports);
    print_warnings(err, cfg.reports.string(), reports.warnings);
  }
  li.clock = ingest::default_clock(turnstile.records, trains.records, reports.records, cfg.dt);
  std::vector<dynamics::VehicleEventCount> events;
  try {
    events = ingest::aggregate_vehicle_events(trains.records, g, li.clock);
  } catch (const Error& e) {
    throw Error(e.code(), cfg.events.string() + ": " + e.what());
  }
  if (!turnstile.records.empty() || !events.empty() || !reports.records.empty()) {
    li.steps = ingest::assemble_inputs(g, turnstile.records, events, reports.records, li.clock);
  } else if (need_data) {
    throw Error(ErrorCode::empty_window, "no turnstile, event or report data to simulate");
  }
  return li;
}

ModelConfig model_config(const RunConfig& cfg, filter::NoiseConfig base = {}) {
  ModelConfig m;
  m.noise = cfg.noise(base);
  m.thresholds = cfg.thresholds();
  m.levels = observation::LevelMapping::with_capacity(cfg.capacity);
  return m;
}

std::string describe_columns(const dynamics::ColumnReport& r) {
  std::ostringstream s;
  s << "max |column sum - 1| = " << r.max_sum_error << ", min coefficient = " << r.min_coefficient;
  if (r.worst_column >= 0) s << ", worst column " << r.worst_column;
  return s.str();
}

}  // namespace

filter::NoiseConfig RunConfig::noise(filter::NoiseConfig base) const {
  if (q_boarding) base.q_boarding = *q_boarding;
  if (q_onboard) base.q_onboard = *q_onboard;
  if (q_alighting) base.q_alighting = *q_alighting;
  if (sigma0) base.sigma0 = *sigma0;
  return base;
}

feedback::Thresholds RunConfig::thresholds() const {
  feedback::Thresholds t;
  if (negative_tolerance) t.negative_tolerance = *negative_tolerance;
  if (variance_threshold) t.variance_threshold = *variance_threshold;
  return t;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  LoadedInputs li;
  std::ofstream snapshots;
  std::ofstream metrics_file;
  try {
    li = load_inputs(cfg, err, true);
    std::filesystem::create_directories(cfg.out);
    snapshots = open_output(cfg.out / "snapshots.jsonl");
    metrics_file = open_output(cfg.out / "metrics.csv");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }

  const NetworkGraph& g = *li.model->graph;
  ModelConfig config = model_config(cfg);
  config.assimilate = !cfg.reports.empty();
  Simulation sim(li.model, config);
  io::MetricsWriter metrics(metrics_file);
  io::TerminusFlows flows(g, std::max<long>(1, 3600 / cfg.dt));
  std::vector<feedback::FeedbackRequest> requests;
  const long first = li.steps.front().timestep;
  sim.reset_state([&] {
    auto s = filter::initial_state(g, config.noise);
    s.timestep = first;
    return s;
  }());
  try {
    for (const auto& in : li.steps) {
      const auto result = sim.step(in);
      for (const auto& doc : io::substep_snapshots(g, result)) snapshots << doc.dump() << '\n';
      metrics.write(result);
      flows.add(result);
      requests.insert(requests.end(), result.requests.begin(), result.requests.end());
    }
  } catch (const Error& e) {
    err << "error: model validation failed: " << e.what() << '\n';
    return kExitValidationError;
  }

  try {
    auto flow_file = open_output(cfg.out / "terminus_flows.csv");
    flows.write_csv(flow_file);
    auto request_file = open_output(cfg.out / "requests.jsonl");
    for (const auto& r : requests) request_file << nlohmann::json(r).dump() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }
  out << "simulated " << li.steps.size() << " timesteps (" << 2 * li.steps.size() << " sub-steps) from "
      << ingest::format_timestamp(li.clock.start_of(li.steps.front().timestep)) << "; " << requests.size()
      << " feedback requests; outputs in " << cfg.out.string() << '\n';
  return kExitOk;
}

int cmd_twin(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  scenario::ScenarioSpec spec;
  try {
    require_path(cfg.spec, "--spec");
    spec = scenario::load_spec(cfg.spec);
    if (cfg.seed) spec.seed = *cfg.seed;
    spec.noise = cfg.noise(spec.noise);
    std::filesystem::create_directories(cfg.out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }

  scenario::TwinResult result;
  scenario::Truth truth;
  try {
    truth = scenario::generate_truth(spec);
    result = scenario::run_twin(spec);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::spec_invalid ? kExitInputError : kExitValidationError;
  }

  try {
    const NetworkGraph& g = *truth.model->graph;
    open_output(cfg.out / "turnstile.csv") << truth.turnstile_csv;
    open_output(cfg.out / "events.csv") << truth.events_csv;
    {
      auto f = open_output(cfg.out / "rmse.csv");
      f << "t,rmse_open_loop,rmse_assimilated\n";
      for (std::size_t k = 0; k < result.rmse_open.size(); ++k) {
        f << k << ',' << result.rmse_open[k] << ',' << result.rmse_assimilated[k] << '\n';
      }
    }
    {
      auto f = open_output(cfg.out / "trajectories.csv");
      f << "t,gridbox,truth,open_loop,assimilated\n";
      for (std::size_t k = 1; k < result.truth.size(); ++k) {
        for (Eigen::Index i = 0; i < result.truth[k].size(); ++i) {
          f << k - 1 << ',' << to_label(g.gridbox_of(static_cast<StateIndex>(i))) << ',' << result.truth[k][i]
            << ',' << result.open_loop[k][i] << ',' << result.assimilated[k][i] << '\n';
        }
      }
    }
    {
      auto f = open_output(cfg.out / "nis.csv");
      f << "update,dimension,nis\n";
      for (std::size_t k = 0; k < result.nis.size(); ++k) {
        f << k << ',' << result.update_sizes[k] << ',' << result.nis[k] << '\n';
      }
    }
    nlohmann::json summary{{"seed", spec.seed},
                           {"timesteps", spec.duration},
                           {"report_policy", std::string(scenario::to_string(spec.reports.policy))},
                           {"mean_rmse_open_loop", result.mean_rmse_open()},
                           {"mean_rmse_assimilated", result.mean_rmse_assimilated()},
                           {"updates", result.nis.size()},
                           {"requests_emitted", result.requests_emitted},
                           {"requests_answered", result.requests_answered}};
    open_output(cfg.out / "summary.json") << summary.dump(2) << '\n';
    out << "twin: mean RMSE open-loop " << result.mean_rmse_open() << ", assimilated "
        << result.mean_rmse_assimilated() << " over " << spec.duration << " timesteps; outputs in "
        << cfg.out.string() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }
  return kExitOk;
}

int cmd_validate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  LoadedInputs li;
  try {
    li = load_inputs(cfg, err, false);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }
  const NetworkModel& model = *li.model;
  const NetworkGraph& g = *model.graph;
  out << "topology: " << g.station_count() << " stations, " << g.edge_count() << " edges, " << g.state_size()
      << " grid boxes\n";

  bool ok = true;
  const auto problems = model.transfers.problems();
  out << "transfers: " << model.transfers.entries().size() << " routed boxes\n";
  for (const auto& p : problems) {
    out << "  invalid: " << p << '\n';
    ok = false;
  }

  const auto b_report = dynamics::audit_columns(model.control.matrix, true);
  out << "B: " << describe_columns(b_report) << '\n';
  try {
    dynamics::validate_control(model.control);
  } catch (const Error& e) {
    out << "  invalid: " << e.what() << '\n';
    ok = false;
  }

  std::vector<dynamics::VehicleEventCount> arrivals;
  std::vector<dynamics::VehicleEventCount> departures;
  long t = 0;
  for (const auto& step : li.steps) {
    if (step.events.empty()) continue;
    t = step.timestep;
    for (const auto& ev : step.events) {
      (ev.kind == dynamics::EventKind::arrival ? arrivals : departures).push_back(ev);
    }
    break;
  }
  if (arrivals.empty() && departures.empty()) out << "note: no vehicle events; F is the identity\n";

  std::vector<StateIndex> all_alighting;
  for (StateIndex i = 0; i < g.state_size(); ++i) {
    if (g.gridbox_of(i).role == Role::alighting) all_alighting.push_back(i);
  }
  try {
    const auto f_arrive = dynamics::build_transition(g, arrivals, model.transfers);
    const auto f_depart = dynamics::build_transition(g, departures, model.transfers, all_alighting);
    for (const auto& [name, f] : {std::pair{"F arrival", &f_arrive}, std::pair{"F departure", &f_depart}}) {
      const auto report = dynamics::audit_columns(f->matrix, false);
      out << name << " (t=" << t << "): " << describe_columns(report) << '\n';
      try {
        dynamics::validate_transition(*f);
      } catch (const Error& e) {
        out << "  invalid: " << e.what() << '\n';
        ok = false;
      }
    }
    if (!li.steps.empty()) {
      const auto u = dynamics::build_control_vector(g, li.steps.front().counts);
      out << "u (t=" << li.steps.front().timestep << "): net injection " << u.sum() << '\n';
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidationError;
  }
  if (!ok) {
    err << "error: validity condition violated\n";
    return kExitValidationError;
  }
  out << "ok\n";
  return kExitOk;
}

int cmd_serve(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::shared_ptr<const NetworkModel> model;
  std::vector<ingest::TimestepInputs> script;
  ModelConfig config;
  try {
    if (!cfg.spec.empty()) {
      auto spec = scenario::load_spec(cfg.spec);
      if (cfg.seed) spec.seed = *cfg.seed;
      const auto truth = scenario::generate_truth(spec);
      model = truth.model;
      const NetworkGraph& g = *model->graph;
      std::istringstream ts(truth.turnstile_csv);
      std::istringstream tr(truth.events_csv);
      const ingest::Clock clock{spec.start, spec.dt};
      const auto turnstile = ingest::parse_turnstile(ts, &g, "turnstile.csv");
      const auto trains = ingest::parse_train_records(tr, "events.csv");
      const auto events = ingest::aggregate_vehicle_events(trains.records, g, clock);
      script = ingest::assemble_inputs(g, turnstile.records, events, {}, clock);
      config = model_config(cfg, spec.noise);
      config.levels = observation::LevelMapping::with_capacity(spec.reports.capacity);
    } else {
      auto li = load_inputs(cfg, err, false);
      model = li.model;
      script = std::move(li.steps);
      config = model_config(cfg);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }

  auto session = std::make_shared<service::Session>(model, config, std::move(script));
  service::HttpService http(session);
  const int port = http.start(cfg.host, cfg.port);
  if (port < 0) {
    err << "error: cannot listen on " << cfg.host << ':' << cfg.port << '\n';
    return kExitInputError;
  }
  if (cfg.rate > 0.0) session->play(cfg.rate).get();
  out << "serving on http://" << cfg.host << ':' << port << "/api/v1 (Ctrl-C to stop)" << std::endl;

  g_interrupted = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  http.stop();
  session->stop();
  return kExitOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transit passenger-loading simulator and assimilation engine", "passflow"};
  app.set_config("--config", "", "TOML/INI file with flag values; command-line flags win");
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig cfg;
  double q_boarding = 0.0, q_onboard = 0.0, q_alighting = 0.0, sigma0 = 0.0, neg_eps = 0.0, var_threshold = 0.0;
  std::uint64_t seed = 0;
  app.add_option("--topology", cfg.topology, "Topology JSON");
  app.add_option("--turnstile", cfg.turnstile, "Turnstile CSV");
  app.add_option("--events", cfg.events, "Train-record CSV");
  app.add_option("--reports", cfg.reports, "Crowdedness reports (JSON lines)");
  app.add_option("--spec", cfg.spec, "Scenario spec JSON (twin, serve)");
  app.add_option("--out", cfg.out, "Output directory")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "Random seed, overrides the scenario spec");
  app.add_option("--dt", cfg.dt, "Timestep length in seconds")->capture_default_str();
  auto* qb = app.add_option("--q-boarding", q_boarding, "Process noise of boarding boxes per sub-step");
  auto* qo = app.add_option("--q-onboard", q_onboard, "Process noise of onboard boxes per sub-step");
  auto* qa = app.add_option("--q-alighting", q_alighting, "Process noise of alighting boxes per sub-step");
  auto* s0 = app.add_option("--sigma0", sigma0, "Prior standard deviation, passengers");
  auto* eps = app.add_option("--neg-eps", neg_eps, "Negative-onboard trigger tolerance, passengers");
  auto* var = app.add_option("--var-threshold", var_threshold, "Platform variance trigger, passengers^2");
  app.add_option("--capacity", cfg.capacity, "Vehicle capacity for the level scale")->capture_default_str();
  app.add_option("--host", cfg.host, "Bind address (serve)")->capture_default_str();
  app.add_option("--port", cfg.port, "Port (serve), 0 picks one")->capture_default_str();
  app.add_option("--rate", cfg.rate, "Auto-play rate in steps/s (serve), 0 starts paused");

  auto* simulate = app.add_subcommand("simulate", "Run the filter over turnstile and train data");
  auto* twin = app.add_subcommand("twin", "Run a twin experiment from a scenario spec");
  twin->add_option("spec", cfg.spec, "Scenario spec JSON");
  auto* validate = app.add_subcommand("validate", "Check inputs and the validity of F and B");
  auto* serve = app.add_subcommand("serve", "Serve a live session over HTTP");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInputError;
  }
  if (*seed_opt) cfg.seed = seed;
  if (*qb) cfg.q_boarding = q_boarding;
  if (*qo) cfg.q_onboard = q_onboard;
  if (*qa) cfg.q_alighting = q_alighting;
  if (*s0) cfg.sigma0 = sigma0;
  if (*eps) cfg.negative_tolerance = neg_eps;
  if (*var) cfg.variance_threshold = var_threshold;

  if (*simulate) return cmd_simulate(cfg, out, err);
  if (*twin) return cmd_twin(cfg, out, err);
  if (*validate) return cmd_validate(cfg, out, err);
  if (*serve) return cmd_serve(cfg, out, err);
  return kExitInputError;
}

}  // namespace passflow::cli

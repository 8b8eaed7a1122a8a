#include "passflow/service.hpp"

#include <algorithm>
#include <set>

#include <httplib.h>

#include "passflow/error.hpp"
#include "passflow/export.hpp"

namespace passflow::service {
namespace {

std::string_view to_string(RunMode mode) { return mode == RunMode::paused ? "paused" : "playing"; }

}  // namespace

nlohmann::json requests_json(const std::vector<feedback::FeedbackRequest>& requests) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : requests) out.push_back(r);
  return out;
}

nlohmann::json to_json(const Snapshot& s) {
  nlohmann::json j = s.state;
  j["version"] = s.version;
  j["error"] = s.error ? nlohmann::json(*s.error) : nlohmann::json(nullptr);
  return j;
}

Session::Session(std::shared_ptr<const NetworkModel> model, ModelConfig config,
                 std::vector<ingest::TimestepInputs> script)
    : model_(model), script_(std::move(script)), sim_(std::move(model), std::move(config)) {
  last_diagnostics_.trace_p = sim_.state().p.trace();
  publish();
  owner_ = std::thread([this] { run(); });
}

Session::~Session() { stop(); }

void Session::stop() {
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  {
    std::lock_guard lock(snapshot_mutex_);
  }
  snapshot_cv_.notify_all();
  if (owner_.joinable()) owner_.join();
}

std::shared_ptr<const Snapshot> Session::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

std::shared_ptr<const Snapshot> Session::wait_for_change(std::uint64_t version,
                                                         std::chrono::milliseconds timeout) const {
  std::unique_lock lock(snapshot_mutex_);
  snapshot_cv_.wait_for(lock, timeout, [&] { return stopping_ || snapshot_->version > version; });
  return snapshot_;
}

std::vector<MetricsRow> Session::metrics() const {
  std::lock_guard lock(snapshot_mutex_);
  return metrics_;
}

void Session::post(Command cmd) {
  {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(std::move(cmd));
  }
  queue_cv_.notify_all();
}

std::future<long> Session::step() {
  StepCmd cmd;
  auto f = cmd.done.get_future();
  post(std::move(cmd));
  return f;
}

std::future<void> Session::play(double rate) {
  PlayCmd cmd{rate, {}};
  auto f = cmd.done.get_future();
  post(std::move(cmd));
  return f;
}

std::future<void> Session::pause() {
  PauseCmd cmd;
  auto f = cmd.done.get_future();
  post(std::move(cmd));
  return f;
}

std::future<FeedbackAck> Session::submit(observation::CrowdednessReport report) {
  FeedbackCmd cmd{std::move(report), {}};
  auto f = cmd.done.get_future();
  post(std::move(cmd));
  return f;
}

void Session::run() {
  while (true) {
    std::optional<Command> cmd;
    {
      std::unique_lock lock(queue_mutex_);
      auto ready = [&] { return stopping_ || !queue_.empty(); };
      if (mode_ == RunMode::playing) {
        queue_cv_.wait_until(lock, next_tick_, ready);
      } else {
        queue_cv_.wait(lock, ready);
      }
      if (stopping_) return;
      if (!queue_.empty()) {
        cmd = std::move(queue_.front());
        queue_.pop_front();
      }
    }
    if (cmd) handle(*cmd);
    if (mode_ == RunMode::playing && std::chrono::steady_clock::now() >= next_tick_) {
      try {
        do_step();
      } catch (const std::exception&) {
        // do_step already paused the session and published the error.
      }
      next_tick_ += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / rate_));
    }
  }
}

void Session::handle(Command& command) {
  std::visit(
      [&](auto& cmd) {
        using T = std::decay_t<decltype(cmd)>;
        if constexpr (std::is_same_v<T, StepCmd>) {
          try {
            cmd.done.set_value(do_step());
          } catch (...) {
            cmd.done.set_exception(std::current_exception());
          }
        } else if constexpr (std::is_same_v<T, PlayCmd>) {
          if (!(cmd.rate > 0.0)) {
            cmd.done.set_exception(std::make_exception_ptr(std::invalid_argument("rate must be positive")));
            return;
          }
          const bool was_playing = mode_ == RunMode::playing;
          rate_ = cmd.rate;
          mode_ = RunMode::playing;
          if (!was_playing) {
            next_tick_ = std::chrono::steady_clock::now() +
                         std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                             std::chrono::duration<double>(1.0 / rate_));
          }
          error_.reset();
          publish();
          cmd.done.set_value();
        } else if constexpr (std::is_same_v<T, PauseCmd>) {
          if (mode_ != RunMode::paused) {
            mode_ = RunMode::paused;
            publish();
          }
          cmd.done.set_value();
        } else {
          try {
            auto& report = cmd.report;
            observation::level_to_measurement(report.level, sim_.config().levels);
            observation::support(graph(), report.location);
            FeedbackAck ack;
            ack.queued_for = sim_.state().timestep + 1;
            if (report.request_id) {
              auto it = pending_.find(*report.request_id);
              if (it == pending_.end()) {
                throw UnknownRequest("no pending feedback request '" + *report.request_id + "'");
              }
              pending_.erase(it);
              ack.resolved_request = report.request_id;
            }
            inbox_.push_back(std::move(report));
            publish();
            cmd.done.set_value(std::move(ack));
          } catch (...) {
            cmd.done.set_exception(std::current_exception());
          }
        }
      },
      command);
}

long Session::do_step() {
  const long k = sim_.state().timestep;
  ingest::TimestepInputs inputs;
  if (k >= 0 && static_cast<std::size_t>(k) < script_.size()) inputs = script_[static_cast<std::size_t>(k)];
  inputs.timestep = k;
  for (auto& r : inputs.reports) r.timestep = k;
  for (auto& m : inputs.measurements) m.timestep = k;
  for (auto& e : inputs.events) e.timestep = k;
  // The whole inbox goes into this step's update.
  for (auto& r : inbox_) {
    r.timestep = k;
    inputs.reports.push_back(std::move(r));
  }
  inbox_.clear();

  StepResult result;
  try {
    result = sim_.step(inputs);
  } catch (const std::exception& e) {
    error_ = e.what();
    mode_ = RunMode::paused;
    publish();
    throw;
  }
  const long now = sim_.state().timestep;
  for (auto& r : result.requests) pending_[r.id] = std::move(r);
  std::erase_if(pending_, [&](const auto& kv) { return kv.second.expires_at() < now; });
  last_diagnostics_ = result.diagnostics;
  {
    std::lock_guard lock(snapshot_mutex_);
    metrics_.push_back({result.timestep, result.diagnostics.trace_p, result.diagnostics.nis,
                        result.diagnostics.conservation_residual});
  }
  publish();
  return now;
}

void Session::publish() {
  auto snap = std::make_shared<Snapshot>();
  snap->version = ++version_;
  snap->timestep = sim_.state().timestep;
  snap->mode = mode_;
  snap->rate = mode_ == RunMode::playing ? rate_ : 0.0;
  snap->error = error_;
  for (const auto& [id, r] : pending_) snap->requests.push_back(r);
  std::sort(snap->requests.begin(), snap->requests.end(),
            [](const auto& a, const auto& b) { return std::tie(a.timestep, a.anchor) < std::tie(b.timestep, b.anchor); });
  const auto& s = sim_.state();
  snap->state = io::snapshot_json(graph(), s.timestep, s.x, s.p.diagonal(), io::diagnostics_json(last_diagnostics_));
  snap->state["mode"] = std::string(to_string(mode_));
  snap->state["rate"] = snap->rate;
  snap->state["inbox"] = inbox_.size();
  {
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(snap);
  }
  snapshot_cv_.notify_all();
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

nlohmann::json stream_event(const Snapshot& snap, std::set<std::string>& known) {
  nlohmann::json added = nlohmann::json::array();
  nlohmann::json removed = nlohmann::json::array();
  std::set<std::string> now;
  for (const auto& r : snap.requests) {
    now.insert(r.id);
    if (!known.contains(r.id)) added.push_back(r);
  }
  for (const auto& id : known) {
    if (!now.contains(id)) removed.push_back(id);
  }
  known = std::move(now);
  return {{"snapshot", to_json(snap)}, {"requests", {{"added", added}, {"removed", removed}}}};
}

}  // namespace

HttpService::HttpService(std::shared_ptr<Session> session, std::string cors_origin)
    : session_(std::move(session)), cors_origin_(std::move(cors_origin)), server_(std::make_unique<httplib::Server>()) {
  routes();
}

HttpService::~HttpService() { stop(); }

void HttpService::routes() {
  server_->set_default_headers({{"Access-Control-Allow-Origin", cors_origin_},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
  server_->Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  auto no_session = [this](httplib::Response& res) {
    if (session_) return false;
    send_error(res, 404, "no session");
    return true;
  };

  server_->Get("/api/v1/state", [this, no_session](const httplib::Request&, httplib::Response& res) {
    if (no_session(res)) return;
    send_json(res, 200, to_json(*session_->snapshot()));
  });

  server_->Get("/api/v1/requests", [this, no_session](const httplib::Request&, httplib::Response& res) {
    if (no_session(res)) return;
    const auto snap = session_->snapshot();
    std::vector<feedback::FeedbackRequest> live;
    for (const auto& r : snap->requests) {
      if (r.expires_at() >= snap->timestep) live.push_back(r);
    }
    send_json(res, 200, requests_json(live));
  });

  server_->Post("/api/v1/feedback", [this, no_session](const httplib::Request& req, httplib::Response& res) {
    if (no_session(res)) return;
    observation::CrowdednessReport report;
    try {
      report = nlohmann::json::parse(req.body).get<observation::CrowdednessReport>();
    } catch (const std::exception& e) {
      send_error(res, 400, e.what());
      return;
    }
    try {
      const auto ack = session_->submit(std::move(report)).get();
      nlohmann::json body{{"queued_for", ack.queued_for}};
      body["resolved"] = ack.resolved_request ? nlohmann::json(*ack.resolved_request) : nlohmann::json(nullptr);
      send_json(res, 200, body);
    } catch (const UnknownRequest& e) {
      send_error(res, 409, e.what());
    } catch (const Error& e) {
      send_error(res, 400, e.what());
    } catch (const std::future_error&) {
      send_error(res, 503, "session stopped");
    }
  });

  server_->Post("/api/v1/control", [this, no_session](const httplib::Request& req, httplib::Response& res) {
    if (no_session(res)) return;
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const std::exception& e) {
      send_error(res, 400, e.what());
      return;
    }
    if (!body.is_object() || !body.contains("action") || !body.at("action").is_string()) {
      send_error(res, 400, "control body needs a string \"action\"");
      return;
    }
    const auto action = body.at("action").get<std::string>();
    try {
      if (action == "step") {
        session_->step().get();
      } else if (action == "play") {
        const auto rate = body.value("rate", nlohmann::json(1.0));
        if (!rate.is_number() || !(rate.get<double>() > 0.0)) {
          send_error(res, 400, "play needs a positive numeric \"rate\"");
          return;
        }
        session_->play(rate.get<double>()).get();
      } else if (action == "pause") {
        session_->pause().get();
      } else {
        send_error(res, 400, "unknown action '" + action + "'");
        return;
      }
    } catch (const std::future_error&) {
      send_error(res, 503, "session stopped");
      return;
    } catch (const std::exception& e) {
      send_error(res, 422, e.what());
      return;
    }
    const auto snap = session_->snapshot();
    send_json(res, 200,
              {{"action", action}, {"t", snap->timestep}, {"mode", std::string(to_string(snap->mode))},
               {"rate", snap->rate}});
  });

  server_->Get("/api/v1/metrics", [this, no_session](const httplib::Request&, httplib::Response& res) {
    if (no_session(res)) return;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& m : session_->metrics()) {
      rows.push_back({{"t", m.t},
                      {"trace_P", m.trace_p},
                      {"NIS", m.nis ? nlohmann::json(*m.nis) : nlohmann::json(nullptr)},
                      {"conservation_residual", m.conservation_residual}});
    }
    send_json(res, 200, rows);
  });

  server_->Get("/api/v1/stream", [this, no_session](const httplib::Request&, httplib::Response& res) {
    if (no_session(res)) return;
    res.set_header("Cache-Control", "no-cache");
    struct StreamState {
      std::uint64_t last = 0;
      int idle = 0;
      std::set<std::string> known;
    };
    auto st = std::make_shared<StreamState>();
    auto session = session_;
    res.set_chunked_content_provider("text/event-stream", [this, session, st](std::size_t, httplib::DataSink& sink) {
      const auto snap = st->last == 0 ? session->snapshot()
                                      : session->wait_for_change(st->last, std::chrono::milliseconds(250));
      if (stopping_ || session->stopped()) {
        sink.done();
        return false;
      }
      std::string chunk;
      if (snap->version > st->last) {
        st->last = snap->version;
        st->idle = 0;
        chunk = "event: snapshot\nid: " + std::to_string(snap->version) +
                "\ndata: " + stream_event(*snap, st->known).dump() + "\n\n";
      } else if (++st->idle % 40 == 0) {
        chunk = ": keepalive\n\n";
      } else {
        return true;
      }
      return sink.write(chunk.data(), chunk.size());
    });
  });
}

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

void HttpService::listen() { server_->listen_after_bind(); }

int HttpService::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  if (bound < 0) return bound;
  thread_ = std::thread([this] { listen(); });
  server_->wait_until_ready();
  return bound;
}

void HttpService::stop() {
  stopping_ = true;
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace passflow::service

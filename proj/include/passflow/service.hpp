#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "passflow/feedback.hpp"
#include "passflow/ingest.hpp"
#include "passflow/observation.hpp"
#include "passflow/simulation.hpp"

namespace httplib {
class Server;
}

namespace passflow::service {

enum class RunMode { paused, playing };

/// Immutable view of the session handed to readers.
struct Snapshot {
  std::uint64_t version = 0;
  long timestep = 0;
  RunMode mode = RunMode::paused;
  double rate = 0.0;
  nlohmann::json state;  // {t, mode, rate, boxes, diagnostics, inbox}
  std::vector<feedback::FeedbackRequest> requests;
  std::optional<std::string> error;
};

struct MetricsRow {
  long t = 0;
  double trace_p = 0.0;
  std::optional<double> nis;
  double conservation_residual = 0.0;
};

struct FeedbackAck {
  long queued_for = 0;
  std::optional<std::string> resolved_request;
};

/// Thrown by Session::submit for a request id that is not pending.
class UnknownRequest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Owns one Simulation on a dedicated thread. Every mutation is a message
/// to that thread; readers get shared immutable snapshots.
class Session {
 public:
  // `script` supplies the inputs of successive steps; once it runs out the
  // session keeps stepping with zero inputs.
  Session(std::shared_ptr<const NetworkModel> model, ModelConfig config, std::vector<ingest::TimestepInputs> script = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  std::shared_ptr<const Snapshot> snapshot() const;
  // Blocks until a snapshot newer than `version` is published, the timeout
  // passes or the session stops. Returns the latest snapshot either way.
  std::shared_ptr<const Snapshot> wait_for_change(std::uint64_t version, std::chrono::milliseconds timeout) const;
  std::vector<MetricsRow> metrics() const;

  // Returns the timestep reached.
  std::future<long> step();
  std::future<void> play(double rate);
  std::future<void> pause();
  // Throws UnknownRequest (via the future) when report.request_id names no
  // pending request.
  std::future<FeedbackAck> submit(observation::CrowdednessReport report);

  const NetworkGraph& graph() const { return *model_->graph; }
  bool stopped() const { return stopping_; }
  void stop();

 private:
  struct StepCmd {
    std::promise<long> done;
  };
  struct PlayCmd {
    double rate;
    std::promise<void> done;
  };
  struct PauseCmd {
    std::promise<void> done;
  };
  struct FeedbackCmd {
    observation::CrowdednessReport report;
    std::promise<FeedbackAck> done;
  };
  using Command = std::variant<StepCmd, PlayCmd, PauseCmd, FeedbackCmd>;

  void run();
  void handle(Command& cmd);
  long do_step();
  void publish();
  void post(Command cmd);

  std::shared_ptr<const NetworkModel> model_;
  std::vector<ingest::TimestepInputs> script_;

  // Owner-thread state.
  Simulation sim_;
  RunMode mode_ = RunMode::paused;
  double rate_ = 0.0;
  std::chrono::steady_clock::time_point next_tick_;
  std::map<std::string, feedback::FeedbackRequest> pending_;
  std::vector<observation::CrowdednessReport> inbox_;
  filter::Diagnostics last_diagnostics_;
  std::optional<std::string> error_;
  std::uint64_t version_ = 0;

  mutable std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<Command> queue_;

  mutable std::mutex snapshot_mutex_;
  mutable std::condition_variable snapshot_cv_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::vector<MetricsRow> metrics_;

  std::atomic<bool> stopping_{false};
  std::thread owner_;
};

nlohmann::json to_json(const Snapshot& snapshot);
nlohmann::json requests_json(const std::vector<feedback::FeedbackRequest>& requests);

/// HTTP+JSON front end under /api/v1 with CORS and a server-sent event
/// stream. A null session answers 404 everywhere.
class HttpService {
 public:
  explicit HttpService(std::shared_ptr<Session> session, std::string cors_origin = "*");
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Port 0 picks a free port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  // bind + listen on a background thread.
  int start(const std::string& host, int port);
  void stop();

 private:
  void routes();

  std::shared_ptr<Session> session_;
  std::string cors_origin_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
};

}  // namespace passflow::service

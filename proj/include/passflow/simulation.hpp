#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "passflow/dynamics.hpp"
#include "passflow/feedback.hpp"
#include "passflow/ingest.hpp"
#include "passflow/kalman.hpp"
#include "passflow/network.hpp"
#include "passflow/observation.hpp"

namespace passflow {

/// Static process-model pieces derived from one topology document.
struct NetworkModel {
  std::shared_ptr<const NetworkGraph> graph;
  dynamics::TransferTable transfers;
  dynamics::ExitWeights exit_weights;
  dynamics::GravityTable gravity;
  dynamics::ControlMatrix control;

  static NetworkModel from_document(const nlohmann::json& document);
  static NetworkModel load(const std::filesystem::path& path);
};

struct ModelConfig {
  filter::NoiseConfig noise;
  observation::LevelMapping levels = observation::LevelMapping::with_capacity(120.0);
  feedback::Thresholds thresholds;
  bool assimilate = true;
};

enum class Phase { arrival, departure };
std::string_view to_string(Phase phase);

/// Mass moved by one vehicle event: onboard -> alighting for arrivals,
/// boarding -> onboard for departures. `station` is where it happened.
struct BoxFlow {
  StationId station;
  EdgeDirection edge;
  dynamics::EventKind kind = dynamics::EventKind::arrival;
  double mass = 0.0;
};

struct SubstepRecord {
  Phase phase = Phase::arrival;
  long substep = 0;
  // Mean and variance after the sub-step; for the departure sub-step these
  // include the update when one happened.
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  double trace_p = 0.0;
  double conservation_residual = 0.0;
  double transition_column_error = 0.0;
  std::vector<BoxFlow> flows;
};

struct StepResult {
  long timestep = 0;  // the data timestep that was processed
  std::array<SubstepRecord, 2> substeps;
  filter::Diagnostics diagnostics;
  std::vector<feedback::FeedbackRequest> requests;
  bool updated = false;
};

/// Single-writer stepper: arrival sub-step (with the minute's control
/// input), departure sub-step (with transfer routing), optional update,
/// trigger scan.
class Simulation {
 public:
  Simulation(std::shared_ptr<const NetworkModel> model, ModelConfig config);

  StepResult step(const ingest::TimestepInputs& inputs);

  const filter::FilterState& state() const { return state_; }
  void reset_state(filter::FilterState state) { state_ = std::move(state); }
  const NetworkModel& model() const { return *model_; }
  const NetworkGraph& graph() const { return *model_->graph; }
  const ModelConfig& config() const { return config_; }

 private:
  std::shared_ptr<const NetworkModel> model_;
  ModelConfig config_;
  Eigen::VectorXd q_;
  filter::FilterState state_;
  feedback::TriggerScanner scanner_;
};

/// Alighting boxes fed by the arrival events, sorted and unique.
std::vector<StateIndex> armed_boxes(const NetworkGraph& graph, std::span<const dynamics::VehicleEventCount> arrivals);

}  // namespace passflow

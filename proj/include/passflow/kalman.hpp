#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "passflow/dynamics.hpp"
#include "passflow/network.hpp"
#include "passflow/observation.hpp"

namespace passflow::filter {

inline constexpr double kConditionLimit = 1e10;
inline constexpr double kStochasticTolerance = 1e-12;

struct NoiseConfig {
  // Process noise per sub-step, passengers^2.
  double q_boarding = 1.0;
  double q_onboard = 0.25;
  double q_alighting = 1.0;
  // Prior standard deviation of every grid box, passengers.
  double sigma0 = 50.0;
};

Eigen::VectorXd process_noise(const NetworkGraph& graph, const NoiseConfig& noise);

struct FilterState {
  Eigen::VectorXd x;
  Eigen::MatrixXd p;
  long substep = 0;   // predicts applied so far
  long timestep = 0;  // data timesteps completed
  // Alighting boxes armed by arrivals in the previous sub-step.
  std::vector<StateIndex> pending_transfer_flags;
};

FilterState initial_state(const NetworkGraph& graph, const NoiseConfig& noise);

struct Diagnostics {
  Eigen::VectorXd innovation;
  Eigen::MatrixXd innovation_covariance;
  std::optional<double> nis;
  double trace_p = 0.0;
  // Sum(x_k) - Sum(x_{k-1}) - Sum(u_k) over the predicts of the step.
  double conservation_residual = 0.0;
  // Largest |column sum - 1| among transition matrices of the step.
  double transition_column_error = 0.0;
};

struct Prediction {
  FilterState state;
  double conservation_residual = 0.0;
  double transition_column_error = 0.0;
};

/// x <- F x + B u, P <- F P F' + diag(q). F and B are checked for
/// column-stochasticity first (InvalidTransition), and the result must
/// conserve total mass up to the control input (ConservationViolation).
Prediction predict(const FilterState& state, const dynamics::TransitionMatrix& f,
                   const dynamics::ControlMatrix& b, const dynamics::ControlVector& u,
                   const Eigen::VectorXd& q_diagonal);

struct Update {
  FilterState state;
  Diagnostics diagnostics;
};

/// Kalman update with Joseph-form covariance. An empty batch returns the
/// state unchanged. Throws SingularInnovationCovariance when S is not
/// positive definite or its condition number exceeds kConditionLimit.
Update update(const FilterState& state, const observation::MeasurementBatch& batch);

/// Two-sided band for the time-averaged NIS of `updates` updates whose
/// measurement dimensions add up to `total_dof`.
struct ChiSquareBand {
  double lower = 0.0;
  double upper = 0.0;
};
ChiSquareBand mean_nis_band(std::size_t total_dof, std::size_t updates, double confidence = 0.95);

}  // namespace passflow::filter

#include "passflow/kalman.hpp"

#include <cmath>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "passflow/error.hpp"

namespace passflow::filter {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::dimension_mismatch, what);
}

}  // namespace

Eigen::VectorXd process_noise(const NetworkGraph& graph, const NoiseConfig& noise) {
  Eigen::VectorXd q(static_cast<Eigen::Index>(graph.state_size()));
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    switch (static_cast<Role>(i % 3)) {
      case Role::boarding: q[i] = noise.q_boarding; break;
      case Role::onboard: q[i] = noise.q_onboard; break;
      case Role::alighting: q[i] = noise.q_alighting; break;
    }
  }
  return q;
}

FilterState initial_state(const NetworkGraph& graph, const NoiseConfig& noise) {
  const auto n = static_cast<Eigen::Index>(graph.state_size());
  FilterState s;
  s.x = Eigen::VectorXd::Zero(n);
  s.p = Eigen::MatrixXd::Identity(n, n) * (noise.sigma0 * noise.sigma0);
  return s;
}

Prediction predict(const FilterState& state, const dynamics::TransitionMatrix& f, const dynamics::ControlMatrix& b,
                   const dynamics::ControlVector& u, const Eigen::VectorXd& q_diagonal) {
  const Eigen::Index n = state.x.size();
  require(state.p.rows() == n && state.p.cols() == n, "covariance does not match state size");
  require(f.matrix.rows() == n && f.matrix.cols() == n, "transition matrix does not match state size");
  require(b.matrix.rows() == n, "control matrix rows do not match state size");
  require(b.matrix.cols() == u.size(), "control vector does not match control matrix");
  require(q_diagonal.size() == n, "process noise does not match state size");

  dynamics::validate_transition(f, kStochasticTolerance);
  dynamics::validate_control(b, kStochasticTolerance);

  Prediction out;
  out.transition_column_error = dynamics::audit_columns(f.matrix, false).max_sum_error;
  out.state.x = f.matrix * state.x + b.matrix * u;
  // F P F' = F (F P)' for symmetric P; both products are sparse x dense.
  const Eigen::MatrixXd fp = f.matrix * state.p;
  out.state.p = f.matrix * fp.transpose();
  out.state.p.diagonal() += q_diagonal;
  out.state.p = 0.5 * (out.state.p + out.state.p.transpose());
  out.state.substep = state.substep + 1;
  out.state.timestep = state.timestep;
  out.state.pending_transfer_flags = state.pending_transfer_flags;

  out.conservation_residual = out.state.x.sum() - state.x.sum() - u.sum();
  const double scale = 1.0 + out.state.x.cwiseAbs().sum();
  if (std::abs(out.conservation_residual) > 1e-6 * scale) {
    std::ostringstream msg;
    msg << "predict step violated passenger conservation by " << out.conservation_residual;
    throw Error(ErrorCode::conservation_violation, msg.str());
  }
  return out;
}

Update update(const FilterState& state, const observation::MeasurementBatch& batch) {
  const Eigen::Index n = state.x.size();
  Update out;
  out.state = state;
  out.diagnostics.trace_p = state.p.trace();
  if (batch.empty()) return out;

  const Eigen::Index m = batch.size();
  require(batch.h.cols() == n, "observation matrix does not match state size");
  require(batch.h.rows() == m && batch.r.size() == m, "observation batch is inconsistent");

  const Eigen::MatrixXd pht = state.p * batch.h.transpose();
  Eigen::MatrixXd s = batch.h * pht;
  s.diagonal() += batch.r;
  s = 0.5 * (s + s.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmin > 0.0) || lmax / lmin > kConditionLimit) {
    std::ostringstream msg;
    msg << "innovation covariance is singular or ill-conditioned (eigenvalues " << lmin << " .. " << lmax << ")";
    throw Error(ErrorCode::singular_innovation_covariance, msg.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::singular_innovation_covariance, "innovation covariance factorisation failed");
  }

  const Eigen::MatrixXd gain = llt.solve(pht.transpose()).transpose();
  const Eigen::VectorXd innovation = batch.z - batch.h * state.x;
  out.state.x = state.x + gain * innovation;

  Eigen::MatrixXd a = -(gain * batch.h);
  a.diagonal().array() += 1.0;
  out.state.p = a * state.p * a.transpose() + gain * batch.r.asDiagonal() * gain.transpose();
  out.state.p = 0.5 * (out.state.p + out.state.p.transpose());

  out.diagnostics.innovation = innovation;
  out.diagnostics.innovation_covariance = s;
  out.diagnostics.nis = innovation.dot(llt.solve(innovation));
  out.diagnostics.trace_p = out.state.p.trace();
  return out;
}

ChiSquareBand mean_nis_band(std::size_t total_dof, std::size_t updates, double confidence) {
  if (total_dof == 0 || updates == 0) {
    throw Error(ErrorCode::dimension_mismatch, "NIS band needs at least one measurement");
  }
  boost::math::chi_squared dist(static_cast<double>(total_dof));
  const double tail = 0.5 * (1.0 - confidence);
  return {boost::math::quantile(dist, tail) / static_cast<double>(updates),
          boost::math::quantile(dist, 1.0 - tail) / static_cast<double>(updates)};
}

}  // namespace passflow::filter

#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "passflow/feedback.hpp"
#include "passflow/network.hpp"
#include "passflow/simulation.hpp"

namespace passflow::io {

/// {t, boxes: [{gridbox, mean, variance}], diagnostics: {...}}.
nlohmann::json snapshot_json(const NetworkGraph& graph, long t, const Eigen::VectorXd& mean,
                             const Eigen::VectorXd& variance, const nlohmann::json& diagnostics);

/// One document per sub-step, tagged with the data timestep, phase and
/// sub-step counter.
std::vector<nlohmann::json> substep_snapshots(const NetworkGraph& graph, const StepResult& step);

nlohmann::json diagnostics_json(const filter::Diagnostics& d);

/// metrics.csv: t,phase,substep,trace_P,NIS,conservation_residual. NIS is
/// empty on rows without an update.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream& out);
  void write(const StepResult& step);

 private:
  std::ostream* out_;
};

/// Mass arriving at and departing from terminus stations, summed into fixed
/// bins (60 minutes by default).
class TerminusFlows {
 public:
  TerminusFlows(const NetworkGraph& graph, long steps_per_bin);

  void add(const StepResult& step);
  // station -> bin -> (arriving, departing)
  const std::map<StationId, std::map<long, std::pair<double, double>>>& bins() const { return bins_; }
  void write_csv(std::ostream& out) const;

 private:
  std::vector<StationId> termini_;
  long steps_per_bin_;
  std::map<StationId, std::map<long, std::pair<double, double>>> bins_;
};

bool is_terminus(const Station& station);

}  // namespace passflow::io

#include "passflow/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>

#include "passflow/error.hpp"

namespace passflow::io {
namespace {

// Shortest text that round-trips the double.
std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  for (int precision = 6; precision < 17; ++precision) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", precision, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

}  // namespace

bool is_terminus(const Station& station) {
  return std::any_of(station.lines.begin(), station.lines.end(), [](const LineMembership& m) { return m.terminus; });
}

nlohmann::json diagnostics_json(const filter::Diagnostics& d) {
  nlohmann::json j{{"trace_P", d.trace_p},
                   {"conservation_residual", d.conservation_residual},
                   {"transition_column_error", d.transition_column_error}};
  j["NIS"] = d.nis ? nlohmann::json(*d.nis) : nlohmann::json(nullptr);
  j["measurements"] = d.innovation.size();
  return j;
}

nlohmann::json snapshot_json(const NetworkGraph& graph, long t, const Eigen::VectorXd& mean,
                             const Eigen::VectorXd& variance, const nlohmann::json& diagnostics) {
  if (mean.size() != static_cast<Eigen::Index>(graph.state_size()) || variance.size() != mean.size()) {
    throw Error(ErrorCode::dimension_mismatch, "snapshot vectors do not match the state size");
  }
  nlohmann::json boxes = nlohmann::json::array();
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    boxes.push_back({{"gridbox", graph.gridbox_of(static_cast<StateIndex>(i))},
                     {"mean", mean[i]},
                     {"variance", variance[i]}});
  }
  return {{"t", t}, {"boxes", std::move(boxes)}, {"diagnostics", diagnostics}};
}

std::vector<nlohmann::json> substep_snapshots(const NetworkGraph& graph, const StepResult& step) {
  std::vector<nlohmann::json> out;
  for (const auto& rec : step.substeps) {
    nlohmann::json diag{{"trace_P", rec.trace_p},
                        {"conservation_residual", rec.conservation_residual},
                        {"transition_column_error", rec.transition_column_error},
                        {"NIS", nullptr}};
    if (rec.phase == Phase::departure && step.diagnostics.nis) diag["NIS"] = *step.diagnostics.nis;
    auto doc = snapshot_json(graph, step.timestep, rec.mean, rec.variance, diag);
    doc["phase"] = std::string(to_string(rec.phase));
    doc["substep"] = rec.substep;
    out.push_back(std::move(doc));
  }
  return out;
}

MetricsWriter::MetricsWriter(std::ostream& out) : out_(&out) {
  *out_ << "t,phase,substep,trace_P,NIS,conservation_residual\n";
}

void MetricsWriter::write(const StepResult& step) {
  for (const auto& rec : step.substeps) {
    *out_ << step.timestep << ',' << to_string(rec.phase) << ',' << rec.substep << ',' << number(rec.trace_p) << ',';
    if (rec.phase == Phase::departure && step.diagnostics.nis) *out_ << number(*step.diagnostics.nis);
    *out_ << ',' << number(rec.conservation_residual) << '\n';
  }
}

TerminusFlows::TerminusFlows(const NetworkGraph& graph, long steps_per_bin) : steps_per_bin_(steps_per_bin) {
  if (steps_per_bin <= 0) throw Error(ErrorCode::spec_invalid, "flow bins must span at least one timestep");
  for (const auto& s : graph.stations()) {
    if (is_terminus(s)) termini_.push_back(s.id);
  }
}

void TerminusFlows::add(const StepResult& step) {
  const long q = step.timestep / steps_per_bin_;
  const long bin = (step.timestep % steps_per_bin_ != 0 && step.timestep < 0) ? q - 1 : q;
  for (const auto& rec : step.substeps) {
    for (const auto& flow : rec.flows) {
      if (!std::binary_search(termini_.begin(), termini_.end(), flow.station)) continue;
      auto& cell = bins_[flow.station][bin];
      (flow.kind == dynamics::EventKind::arrival ? cell.first : cell.second) += flow.mass;
    }
  }
}

void TerminusFlows::write_csv(std::ostream& out) const {
  out << "station,bin,arriving,departing\n";
  for (const auto& [station, per_bin] : bins_) {
    for (const auto& [bin, cell] : per_bin) {
      out << station << ',' << bin << ',' << number(cell.first) << ',' << number(cell.second) << '\n';
    }
  }
}

}  // namespace passflow::io

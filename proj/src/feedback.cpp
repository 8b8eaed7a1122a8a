#include "passflow/feedback.hpp"

#include <algorithm>

namespace passflow::feedback {

std::string_view to_string(Reason reason) {
  return reason == Reason::negative_onboard ? "negative_onboard" : "high_variance";
}

std::string target_key(const Target& target) {
  if (const auto* box = std::get_if<GridBoxId>(&target)) return "box:" + to_label(*box);
  return "station:" + std::get<StationId>(target);
}

void to_json(nlohmann::json& j, const FeedbackRequest& request) {
  nlohmann::json target;
  if (const auto* box = std::get_if<GridBoxId>(&request.target)) {
    target = {{"gridbox", *box}};
  } else {
    target = {{"station", std::get<StationId>(request.target)}};
  }
  j = nlohmann::json{{"id", request.id},
                     {"t", request.timestep},
                     {"target", target},
                     {"reason", std::string(to_string(request.reason))},
                     {"magnitude", request.magnitude},
                     {"expiry", request.expiry},
                     {"expires_at", request.expires_at()}};
}

std::vector<FeedbackRequest> candidate_requests(const NetworkGraph& graph, const filter::FilterState& state,
                                                const Thresholds& thresholds) {
  std::vector<FeedbackRequest> out;
  for (StateIndex i = 0; i < graph.state_size(); ++i) {
    if (i % 3 != static_cast<StateIndex>(Role::onboard)) continue;
    const double mean = state.x[static_cast<Eigen::Index>(i)];
    if (mean < -thresholds.negative_tolerance) {
      FeedbackRequest r;
      r.timestep = state.timestep;
      r.target = graph.gridbox_of(i);
      r.reason = Reason::negative_onboard;
      r.magnitude = mean;
      r.expiry = thresholds.expiry;
      r.anchor = i;
      out.push_back(std::move(r));
    }
  }
  for (const auto& st : graph.stations()) {
    const auto boxes = graph.boarding_boxes_at(st.id);
    double variance = 0.0;
    for (auto b : boxes) variance += state.p(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
    if (!boxes.empty() && variance > thresholds.variance_threshold) {
      FeedbackRequest r;
      r.timestep = state.timestep;
      r.target = st.id;
      r.reason = Reason::high_variance;
      r.magnitude = variance;
      r.expiry = thresholds.expiry;
      r.anchor = boxes.front();
      out.push_back(std::move(r));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const FeedbackRequest& a, const FeedbackRequest& b) {
    return a.anchor < b.anchor;
  });
  return out;
}

std::vector<FeedbackRequest> TriggerScanner::scan(const NetworkGraph& graph, const filter::FilterState& state) {
  std::vector<FeedbackRequest> emitted;
  for (auto& r : candidate_requests(graph, state, thresholds_)) {
    const std::string key = target_key(r.target);
    auto it = last_emitted_.find(key);
    if (it != last_emitted_.end() && state.timestep - it->second < thresholds_.cooldown) continue;
    last_emitted_[key] = state.timestep;
    r.id = "R" + std::to_string(next_id_++);
    emitted.push_back(std::move(r));
  }
  return emitted;
}

}  // namespace passflow::feedback

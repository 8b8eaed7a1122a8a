#pragma once

#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "passflow/kalman.hpp"
#include "passflow/network.hpp"

namespace passflow::feedback {

enum class Reason { negative_onboard, high_variance };

std::string_view to_string(Reason reason);

struct Thresholds {
  double negative_tolerance = 1.0;      // passengers
  double variance_threshold = 2500.0;   // passengers^2, summed over a station's boarding boxes
  long cooldown = 10;                   // timesteps between requests for one target
  long expiry = 10;                     // timesteps a request stays answerable
};

using Target = std::variant<GridBoxId, StationId>;

struct FeedbackRequest {
  std::string id;
  long timestep = 0;
  Target target;
  Reason reason = Reason::negative_onboard;
  double magnitude = 0.0;  // mean (negative_onboard) or summed variance (high_variance)
  long expiry = 0;
  StateIndex anchor = 0;   // state index used for ordering

  long expires_at() const { return timestep + expiry; }
};

std::string target_key(const Target& target);

void to_json(nlohmann::json& j, const FeedbackRequest& request);

/// Every request the thresholds call for on this state, ignoring cooldown,
/// ordered by state index. Ids are left empty.
std::vector<FeedbackRequest> candidate_requests(const NetworkGraph& graph, const filter::FilterState& state,
                                                const Thresholds& thresholds);

/// Stateful wrapper that applies per-target cooldown and assigns ids R1, R2, ...
/// Owned by the single writer that steps the simulation.
class TriggerScanner {
 public:
  explicit TriggerScanner(Thresholds thresholds = {}) : thresholds_(thresholds) {}

  std::vector<FeedbackRequest> scan(const NetworkGraph& graph, const filter::FilterState& state);

  const Thresholds& thresholds() const { return thresholds_; }

 private:
  Thresholds thresholds_;
  std::map<std::string, long> last_emitted_;
  long next_id_ = 1;
};

}  // namespace passflow::feedback

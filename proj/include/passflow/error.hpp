#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace passflow {

enum class ErrorCode {
  duplicate_id,
  disconnected_graph,
  dangling_edge_reference,
  invalid_topology,
  unknown_grid_box,
  center_not_on_line,
  unknown_station,
  unknown_edge,
  conflicting_events,
  invalid_event,
  negative_count,
  station_without_outgoing_edge,
  invalid_transfer,
  level_out_of_range,
  mixed_timesteps,
  invalid_report,
  dimension_mismatch,
  invalid_transition,
  conservation_violation,
  singular_innovation_covariance,
  malformed_row,
  unmappable_record,
  empty_window,
  io_error,
  spec_invalid,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a code so callers can branch
// on the kind of failure without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace passflow

#include "passflow/error.hpp"

namespace passflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::duplicate_id: return "DuplicateId";
    case ErrorCode::disconnected_graph: return "DisconnectedGraph";
    case ErrorCode::dangling_edge_reference: return "DanglingEdgeReference";
    case ErrorCode::invalid_topology: return "InvalidTopology";
    case ErrorCode::unknown_grid_box: return "UnknownGridBox";
    case ErrorCode::center_not_on_line: return "CenterNotOnLine";
    case ErrorCode::unknown_station: return "UnknownStation";
    case ErrorCode::unknown_edge: return "UnknownEdge";
    case ErrorCode::conflicting_events: return "ConflictingEvents";
    case ErrorCode::invalid_event: return "InvalidEvent";
    case ErrorCode::negative_count: return "NegativeCount";
    case ErrorCode::station_without_outgoing_edge: return "StationWithoutOutgoingEdge";
    case ErrorCode::invalid_transfer: return "InvalidTransfer";
    case ErrorCode::level_out_of_range: return "LevelOutOfRange";
    case ErrorCode::mixed_timesteps: return "MixedTimesteps";
    case ErrorCode::invalid_report: return "InvalidReport";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::invalid_transition: return "InvalidTransition";
    case ErrorCode::conservation_violation: return "ConservationViolation";
    case ErrorCode::singular_innovation_covariance: return "SingularInnovationCovariance";
    case ErrorCode::malformed_row: return "MalformedRow";
    case ErrorCode::unmappable_record: return "UnmappableRecord";
    case ErrorCode::empty_window: return "EmptyWindow";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::spec_invalid: return "SpecInvalid";
  }
  return "Unknown";
}

}  // namespace passflow

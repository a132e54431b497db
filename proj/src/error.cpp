#include "brace/error.hpp"

namespace brace {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kGenerationInfeasible: return "generation_infeasible";
    case ErrorCode::kInvalidAction: return "invalid_action";
    case ErrorCode::kObservationLayoutMismatch: return "observation_layout_mismatch";
    case ErrorCode::kDegenerateDirection: return "degenerate_direction";
    case ErrorCode::kInsufficientCalibrationData: return "insufficient_calibration_data";
    case ErrorCode::kPathPlanningFailed: return "path_planning_failed";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kStaleCache: return "stale_cache";
    case ErrorCode::kEmptyTrajectory: return "empty_trajectory";
    case ErrorCode::kNonFiniteUtility: return "non_finite_utility";
    case ErrorCode::kCurriculumStall: return "curriculum_stall";
    case ErrorCode::kConfigParse: return "config_parse";
    case ErrorCode::kCheckpointFormat: return "checkpoint_format";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace brace

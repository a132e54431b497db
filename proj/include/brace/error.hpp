#ifndef BRACE_ERROR_HPP_
#define BRACE_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace brace {

enum class ErrorCode {
  kGenerationInfeasible,
  kInvalidAction,
  kObservationLayoutMismatch,
  kDegenerateDirection,
  kInsufficientCalibrationData,
  kPathPlanningFailed,
  kShapeMismatch,
  kStaleCache,
  kEmptyTrajectory,
  kNonFiniteUtility,
  kCurriculumStall,
  kConfigParse,
  kCheckpointFormat,
  kInvalidArgument,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Structured failure carrying a machine-readable code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Config parse failures keep the offending line for the CLI exit message.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& message, int line)
      : Error(ErrorCode::kConfigParse, message), line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace brace

#endif  // BRACE_ERROR_HPP_

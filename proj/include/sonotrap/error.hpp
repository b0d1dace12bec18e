#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sonotrap {

enum class ErrorCode {
  InvalidArgument,
  LayoutInfeasible,
  AdcChannelLimit,
  SensorRange,
  SensorIo,
  OutOfVolume,
  FrameShape,
  NoEdges,
  Singularity,
  SliceTooSmall,
  NoReceiver,
  UnstablePlan,
  VersionMismatch,
  Parse,
};

std::string_view to_string(ErrorCode code);

// Validation errors map to CLI exit code 2, everything else to 1.
bool is_validation_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace sonotrap

#include "sonotrap/error.hpp"

namespace sonotrap {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::LayoutInfeasible: return "layout-infeasible";
    case ErrorCode::AdcChannelLimit: return "adc-channel-limit";
    case ErrorCode::SensorRange: return "sensor-range";
    case ErrorCode::SensorIo: return "sensor-io";
    case ErrorCode::OutOfVolume: return "out-of-volume";
    case ErrorCode::FrameShape: return "frame-shape";
    case ErrorCode::NoEdges: return "no-edges";
    case ErrorCode::Singularity: return "singularity";
    case ErrorCode::SliceTooSmall: return "slice-too-small";
    case ErrorCode::NoReceiver: return "no-receiver";
    case ErrorCode::UnstablePlan: return "unstable-plan";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::Parse: return "parse";
  }
  return "unknown";
}

bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::SensorIo:
    case ErrorCode::Singularity:
    case ErrorCode::NoEdges:
      return false;
    default:
      return true;
  }
}

}  // namespace sonotrap

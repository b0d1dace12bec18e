#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sonotrap/dynamics.hpp"

namespace sonotrap {

enum class PathShape { Linear, Circular };
std::string to_string(PathShape shape);
PathShape path_shape_from_string(const std::string& s);

/// Linear: back-and-forth sweep of `extent` mm along +x from the array axis.
/// Circular: orbit of radius `extent` mm about the axis, starting on +x.
struct TrajectorySpec {
  PathShape shape = PathShape::Linear;
  double extent_mm = 10.0;
  double speed_mm_s = 0.0;
  double step_mm = 0.0;
  double height_mm = 100.0;
};

/// One row of the measured speed table: speed reached at a step size, and
/// the speed the software pipeline gives at the hardware step size.
struct SpeedTableRow {
  std::string label;
  PathShape shape;
  double speed_mm_s;
  double step_mm;
  std::optional<double> normalized_speed_mm_s;
  std::optional<double> fixed_step_mm;

  /// Back-computed refresh rate speed / step.
  double refresh_hz() const { return speed_mm_s / step_mm; }
};
std::vector<SpeedTableRow> measured_speed_table();

/// speed = step * refresh.
double kinematic_speed(double step_mm, const ControllerTiming& timing);

/// Relative tolerance of the speed = step x refresh check at plan time.
inline constexpr double kKinematicTolerance = 0.005;
// Focus height above the reflector plate for standing-wave traps.
inline constexpr double kReflectorFocusLiftMm = 50.0;

/// Predicted trap width 2 lambda h / D at the path height; the escape radius
/// and twice the step-size limit.
double trap_width_mm(const ArrayLayout& layout, const MediumState& medium, double height_mm);

/// Waypoints (as trap positions) for one sweep or one orbit, excluding the
/// start point, which is also the last waypoint. Consecutive waypoints are
/// exactly step apart except for the final partial step.
std::vector<FocalCommand> plan_steps(const TrajectorySpec& spec, const ControllerTiming& timing,
                                     const ArrayLayout& layout, const MediumState& medium);

/// Start point of the path.
Vec3 path_start(const TrajectorySpec& spec);

/// Maps a desired trap position to a focal command. Without a reflector the
/// focus is the trap. With one, the focus sits kReflectorFocusLiftMm above
/// the plate and its lateral position inverts a measured map from focus to
/// trap position. The map is sampled on a polar grid over one eighth of the
/// plane (the square array's symmetry) by following the equilibrium outward.
class TrapSteering {
 public:
  explicit TrapSteering(const ArrayLayout& layout);

  static TrapSteering calibrate(const ArrayLayout& layout, const MediumState& medium, const ParticleState& particle,
                                double height_mm, double max_radius_mm, double source_amplitude);

  FocalCommand focus_for(const Vec3& trap) const;
  /// Interpolated lateral trap position for a lateral focus position.
  Eigen::Vector2d trap_for_focus(const Eigen::Vector2d& focus) const;
  bool calibrated() const { return !radii_.empty(); }
  /// Equilibrium height of the on-axis trap found during calibration.
  std::optional<double> trap_height() const { return trap_height_; }
  double calibrated_radius() const { return radii_.empty() ? 0.0 : radii_.back(); }

 private:
  Eigen::Vector2d sector_trap(double r, double a) const;

  std::optional<double> reflector_z_;
  std::vector<double> radii_;   // focus radii
  std::vector<double> angles_;  // focus azimuths in [0, pi/4]
  std::vector<std::vector<Eigen::Vector2d>> trap_;  // [angle][radius]
  std::optional<double> trap_height_;
};

struct ExperimentOptions {
  int substeps = 10;               // integrator steps per frame, at least
  double max_dt_s = 1e-5;          // more substeps if a frame needs them; 0: off
  int escape_frames = 20;          // consecutive frames beyond the trap width
  size_t hold_frames = 200;        // frames simulated for a zero-speed spec
  double source_amplitude = 0.0;   // 0: default calibration
  bool record_path = false;
};

struct ExperimentResult {
  bool completed = false;
  double commanded_speed = 0.0;   // mm/s, path length / (frames / refresh)
  double particle_speed = 0.0;    // mm/s, particle path length / elapsed time
  std::optional<size_t> escape_frame;
  double rms_tracking_error = 0.0;  // mm
  size_t frames = 0;
  Vec3 start_equilibrium = Vec3::Zero();
  std::vector<TrajectoryPoint> path;  // end of every frame, when recorded
};

/// Repeats the planned path `iterations` times with one frame per waypoint
/// and `substeps` integrator steps per frame (more when the frame period
/// exceeds substeps x max_dt_s, so slow controllers are not integrated more
/// coarsely than fast ones). The particle starts at rest at
/// the equilibrium of the first trap. Tracking error is the RMS over every
/// integrator step of the distance to (waypoint x, waypoint y, start
/// equilibrium z); escape is judged at frame ends.
ExperimentResult run_experiment(const ArrayLayout& layout, const MediumState& medium, const TrajectorySpec& spec,
                                const ControllerTiming& timing, const ParticleState& particle, int iterations,
                                const TrapSteering& steering, const ExperimentOptions& options = {});

/// Calibrates steering for the path's height and extent, then runs.
ExperimentResult run_experiment(const ArrayLayout& layout, const MediumState& medium, const TrajectorySpec& spec,
                                const ControllerTiming& timing, const ParticleState& particle, int iterations,
                                const ExperimentOptions& options = {});

struct SpeedSearchOptions {
  int iterations = 0;        // 0: 10 sweeps for linear, 5 orbits for circular
  double start_mm_s = 400.0;
  double max_mm_s = 50'000.0;
  double relative_tolerance = 0.02;
  double max_step_mm = 0.0;  // step budget; 0: half the trap width
  ExperimentOptions experiment;
};

/// Hardware step size of the measured table for the shape, used as the
/// step budget when comparing refresh rates.
double table_step_budget(PathShape shape);

/// Largest speed whose run completes: doubling ramp from start_mm_s, then
/// bisection below the first failure. Speeds are capped at
/// max_step_mm x refresh, so a faster controller can reach higher speeds with
/// the same step. Returns 0 when the start speed already escapes. Plans
/// rejected by the step-size guard count as failures.
double max_stable_speed(const ArrayLayout& layout, const MediumState& medium, PathShape shape, double extent_mm,
                        double height_mm, const ControllerTiming& timing, const ParticleState& particle,
                        const SpeedSearchOptions& options = {});

}  // namespace sonotrap

#include "sonotrap/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "sonotrap/error.hpp"

namespace sonotrap {

std::string to_string(PathShape shape) { return shape == PathShape::Linear ? "linear" : "circular"; }

PathShape path_shape_from_string(const std::string& s) {
  if (s == "linear") return PathShape::Linear;
  if (s == "circular") return PathShape::Circular;
  throw Error(ErrorCode::InvalidArgument, "unknown shape '" + s + "' (expected linear or circular)");
}

std::vector<SpeedTableRow> measured_speed_table() {
  return {
      {"linear software", PathShape::Linear, 385.0, 0.05929, 168.0, 0.026},
      {"linear hardware", PathShape::Linear, 392.0, 0.026, 392.0, 0.026},
      {"circular software", PathShape::Circular, 450.0, 0.0709, 197.0, 0.0304},
      {"circular hardware", PathShape::Circular, 460.0, 0.0304, 460.0, 0.0304},
  };
}

double table_step_budget(PathShape shape) {
  for (const auto& row : measured_speed_table()) {
    if (row.shape == shape && row.label.ends_with("hardware")) return row.step_mm;
  }
  throw Error(ErrorCode::InvalidArgument, "no table row for shape");
}

double kinematic_speed(double step_mm, const ControllerTiming& timing) { return step_mm * timing.refresh_hz; }

double trap_width_mm(const ArrayLayout& layout, const MediumState& medium, double height_mm) {
  return focal_width(wavelength_mm(layout.emitter_carrier(), medium), height_mm, layout.side_length());
}

Vec3 path_start(const TrajectorySpec& spec) {
  if (spec.shape == PathShape::Linear) return {0.0, 0.0, spec.height_mm};
  return {spec.extent_mm, 0.0, spec.height_mm};
}

std::vector<FocalCommand> plan_steps(const TrajectorySpec& spec, const ControllerTiming& timing,
                                     const ArrayLayout& layout, const MediumState& medium) {
  if (spec.extent_mm < 0.0 || spec.speed_mm_s < 0.0 || spec.step_mm < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "extent, speed and step must be non-negative");
  }
  const Vec3 start = path_start(spec);
  if (spec.extent_mm == 0.0 || spec.speed_mm_s == 0.0) {
    if (spec.speed_mm_s > 0.0 && spec.step_mm == 0.0) {
      throw Error(ErrorCode::InvalidArgument, "a moving trap needs a positive step");
    }
    return {FocalCommand{start}};
  }
  if (spec.step_mm == 0.0) throw Error(ErrorCode::InvalidArgument, "a moving trap needs a positive step");

  const double kinematic = kinematic_speed(spec.step_mm, timing);
  if (std::abs(kinematic - spec.speed_mm_s) > kKinematicTolerance * spec.speed_mm_s) {
    std::ostringstream os;
    os << "speed " << spec.speed_mm_s << " mm/s disagrees with step x refresh = " << kinematic << " mm/s";
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
  const double width = trap_width_mm(layout, medium, spec.height_mm);
  if (spec.step_mm > width / 2.0) {
    std::ostringstream os;
    os << "step " << spec.step_mm << " mm exceeds half the trap width (" << width / 2.0 << " mm)";
    throw Error(ErrorCode::UnstablePlan, os.str());
  }

  std::vector<FocalCommand> out;
  if (spec.shape == PathShape::Linear) {
    const auto n = static_cast<size_t>(std::ceil(spec.extent_mm / spec.step_mm - 1e-9));
    out.reserve(2 * n);
    for (size_t i = 1; i <= n; ++i) {
      const double s = std::min(spec.extent_mm, static_cast<double>(i) * spec.step_mm);
      out.push_back({start + Vec3(s, 0.0, 0.0)});
    }
    for (size_t i = 1; i <= n; ++i) {
      const double s = std::max(0.0, spec.extent_mm - static_cast<double>(i) * spec.step_mm);
      out.push_back({start + Vec3(s, 0.0, 0.0)});
    }
  } else {
    const double r = spec.extent_mm;
    if (spec.step_mm >= 2.0 * r) throw Error(ErrorCode::UnstablePlan, "step longer than the orbit diameter");
    // Chord of length `step` subtends this angle.
    const double dtheta = 2.0 * std::asin(spec.step_mm / (2.0 * r));
    const double two_pi = 2.0 * std::numbers::pi;
    const auto n = static_cast<size_t>(std::ceil(two_pi / dtheta - 1e-9));
    out.reserve(n);
    for (size_t i = 1; i <= n; ++i) {
      const double th = i == n ? two_pi : static_cast<double>(i) * dtheta;
      out.push_back({Vec3(r * std::cos(th), r * std::sin(th), spec.height_mm)});
    }
  }
  return out;
}

TrapSteering::TrapSteering(const ArrayLayout& layout) : reflector_z_(layout.reflector_z()) {}

namespace {

constexpr double kQuarterPi = std::numbers::pi / 4.0;

// Element of the square's symmetry group taking a point into the sector
// 0 <= azimuth <= pi/4: a rotation by quarter turns, then an optional swap.
struct SectorFold {
  int quarter = 0;
  bool swap = false;

  static SectorFold of(const Eigen::Vector2d& p) {
    SectorFold f;
    double a = std::atan2(p.y(), p.x());
    if (a < 0.0) a += 2.0 * std::numbers::pi;
    f.quarter = std::min(3, static_cast<int>(std::floor(a / (2.0 * kQuarterPi))));
    f.swap = a - f.quarter * 2.0 * kQuarterPi > kQuarterPi;
    return f;
  }
  Eigen::Vector2d fold(Eigen::Vector2d p) const {
    for (int i = 0; i < quarter; ++i) p = Eigen::Vector2d(p.y(), -p.x());
    if (swap) p = Eigen::Vector2d(p.y(), p.x());
    return p;
  }
  Eigen::Vector2d unfold(Eigen::Vector2d p) const {
    if (swap) p = Eigen::Vector2d(p.y(), p.x());
    for (int i = 0; i < quarter; ++i) p = Eigen::Vector2d(-p.y(), p.x());
    return p;
  }
};

// Segment index and fraction for linear interpolation (extrapolates at ends).
std::pair<size_t, double> bracket(const std::vector<double>& xs, double x) {
  if (xs.size() < 2) return {0, 0.0};
  auto it = std::upper_bound(xs.begin(), xs.end(), x);
  size_t hi = std::clamp<size_t>(static_cast<size_t>(it - xs.begin()), 1, xs.size() - 1);
  const size_t lo = hi - 1;
  return {lo, (x - xs[lo]) / (xs[hi] - xs[lo])};
}

}  // namespace

Eigen::Vector2d TrapSteering::sector_trap(double r, double a) const {
  const auto [i, t] = bracket(radii_, r);
  const auto [j, s] = bracket(angles_, a);
  auto along = [&](size_t jj) {
    const auto& row = trap_[jj];
    if (row.size() < 2) return row.front();
    return Eigen::Vector2d(row[i] + t * (row[i + 1] - row[i]));
  };
  if (angles_.size() < 2) return along(0);
  return along(j) + s * (along(j + 1) - along(j));
}

Eigen::Vector2d TrapSteering::trap_for_focus(const Eigen::Vector2d& focus) const {
  if (!calibrated()) return focus;
  const auto fold = SectorFold::of(focus);
  const Eigen::Vector2d p = fold.fold(focus);
  const double r = p.norm();
  const double a = r > 0.0 ? std::atan2(p.y(), p.x()) : 0.0;
  return fold.unfold(sector_trap(r, std::clamp(a, 0.0, kQuarterPi)));
}

FocalCommand TrapSteering::focus_for(const Vec3& trap) const {
  if (!reflector_z_) return FocalCommand{trap};
  const double fz = *reflector_z_ + kReflectorFocusLiftMm;
  const Eigen::Vector2d target(trap.x(), trap.y());
  if (!calibrated()) return FocalCommand{Vec3(trap.x(), trap.y(), fz)};
  // Newton on the interpolated focus -> trap map.
  Eigen::Vector2d f = target;
  const double h = 1e-3;
  for (int it = 0; it < 20; ++it) {
    const Eigen::Vector2d res = trap_for_focus(f) - target;
    if (res.norm() < 1e-9) break;
    Eigen::Matrix2d j;
    j.col(0) = (trap_for_focus(f + Eigen::Vector2d(h, 0.0)) - trap_for_focus(f - Eigen::Vector2d(h, 0.0))) / (2 * h);
    j.col(1) = (trap_for_focus(f + Eigen::Vector2d(0.0, h)) - trap_for_focus(f - Eigen::Vector2d(0.0, h))) / (2 * h);
    const Eigen::Vector2d step = j.partialPivLu().solve(res);
    if (!step.allFinite()) break;
    f -= step;
  }
  return FocalCommand{Vec3(f.x(), f.y(), fz)};
}

TrapSteering TrapSteering::calibrate(const ArrayLayout& layout, const MediumState& medium,
                                     const ParticleState& particle, double height_mm, double max_radius_mm,
                                     double source_amplitude) {
  TrapSteering steering(layout);
  if (!layout.reflector_z()) return steering;
  const auto quant = QuantizationConfig::for_layout(layout);
  const auto volume = layout.working_volume();
  const double lambda = wavelength_mm(layout.emitter_carrier(), medium);
  const double zr = *layout.reflector_z();

  auto field_for = [&](const Eigen::Vector2d& focus) {
    const auto cmd = FocalCommand{Vec3(focus.x(), focus.y(), zr + kReflectorFocusLiftMm)};
    return AcousticField(layout, compute_frame(layout, cmd, medium, quant), medium, source_amplitude);
  };

  // Start from the pressure node nearest the requested height on the axis.
  const auto axis_field = field_for(Eigen::Vector2d::Zero());
  const double lo = std::max(volume.z.lo, height_mm - lambda);
  const double hi = std::min(zr - lambda / 8.0, height_mm + lambda);
  const auto nodes = pressure_nodes(axis_field, Vec3::Zero(), Vec3::UnitZ(), lo, hi, lambda / 100.0);
  if (nodes.empty()) throw Error(ErrorCode::InvalidArgument, "no pressure node near the requested trap height");
  const double node = *std::min_element(nodes.begin(), nodes.end(), [&](double a, double b) {
    return std::abs(a - height_mm) < std::abs(b - height_mm);
  });
  const auto axis_eq = find_equilibrium(axis_field, particle, Vec3(0.0, 0.0, node - lambda / 400.0));
  if (!axis_eq.stable) throw Error(ErrorCode::InvalidArgument, "no stable trap near the requested height");
  steering.trap_height_ = axis_eq.position.z();

  const double step = 5.0;
  const double reach = std::min(volume.x.hi, 1.25 * max_radius_mm + 2.0 * step);
  const auto n_radii = static_cast<size_t>(std::ceil(reach / step)) + 1;
  const int n_angles = 5;
  std::vector<std::vector<Eigen::Vector2d>> rows;
  size_t usable = n_radii;
  for (int j = 0; j < n_angles; ++j) {
    const double a = kQuarterPi * j / (n_angles - 1);
    const Eigen::Vector2d dir(std::cos(a), std::sin(a));
    std::vector<Eigen::Vector2d> row{Eigen::Vector2d::Zero()};
    Vec3 guess = axis_eq.position;
    for (size_t i = 1; i < n_radii; ++i) {
      const Eigen::Vector2d focus = dir * (step * static_cast<double>(i));
      if (!volume.contains(Vec3(focus.x(), focus.y(), zr + kReflectorFocusLiftMm))) break;
      const auto e = find_equilibrium(field_for(focus), particle, guess);
      if (!e.stable || (e.position - guess).norm() > step * 2.0) break;
      row.emplace_back(e.position.x(), e.position.y());
      guess = e.position;
    }
    usable = std::min(usable, row.size());
    rows.push_back(std::move(row));
    steering.angles_.push_back(a);
  }
  if (usable < 2) throw Error(ErrorCode::InvalidArgument, "trap cannot be steered away from the axis");
  for (auto& row : rows) row.resize(usable);
  for (size_t i = 0; i < usable; ++i) steering.radii_.push_back(step * static_cast<double>(i));
  steering.trap_ = std::move(rows);
  return steering;
}

ExperimentResult run_experiment(const ArrayLayout& layout, const MediumState& medium, const TrajectorySpec& spec,
                                const ControllerTiming& timing, const ParticleState& particle, int iterations,
                                const TrapSteering& steering, const ExperimentOptions& options) {
  if (iterations < 1) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 1");
  if (options.substeps < 1 || options.escape_frames < 1 || !(options.max_dt_s >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "substeps and escape frames must be >= 1, max_dt_s >= 0");
  }
  const double amplitude = options.source_amplitude > 0.0 ? options.source_amplitude : default_source_amplitude();
  const auto waypoints = plan_steps(spec, timing, layout, medium);
  const bool holding = waypoints.size() == 1;
  const size_t frames = holding ? options.hold_frames : waypoints.size() * static_cast<size_t>(iterations);
  int substeps = options.substeps;
  if (options.max_dt_s > 0.0) {
    substeps = std::max(substeps, static_cast<int>(std::ceil(1.0 / (timing.refresh_hz * options.max_dt_s))));
  }
  const double dt = 1.0 / (timing.refresh_hz * substeps);
  const double width = trap_width_mm(layout, medium, spec.height_mm);
  const auto quant = QuantizationConfig::for_layout(layout);

  auto field_for = [&](const Vec3& trap) {
    const auto frame = compute_frame(layout, steering.focus_for(trap), medium, quant);
    return AcousticField(layout, frame, medium, amplitude);
  };

  ExperimentResult out;
  const Vec3 start = path_start(spec);
  Vec3 guess = start;
  if (steering.trap_height()) guess.z() = *steering.trap_height();
  const auto eq = find_equilibrium(field_for(start), particle, guess);
  if (!eq.converged) throw Error(ErrorCode::InvalidArgument, "no trap equilibrium at the path start");
  out.start_equilibrium = eq.position;
  const double z_ref = eq.position.z();

  const ParticleIntegrator integrator(particle);
  ParticleState state = particle;
  state.position = eq.position;
  state.velocity.setZero();

  double sq_sum = 0.0;
  double travelled = 0.0;
  double commanded = 0.0;
  Vec3 prev_trap = start;
  int outside = 0;
  size_t done = 0;
  for (size_t f = 0; f < frames; ++f) {
    const Vec3 trap = holding ? start : waypoints[f % waypoints.size()].target;
    commanded += (trap - prev_trap).norm();
    prev_trap = trap;
    const auto field = field_for(trap);
    const Vec3 ref(trap.x(), trap.y(), z_ref);
    for (int s = 0; s < substeps; ++s) {
      const Vec3 before = state.position;
      integrator.step(&field, state, dt);
      travelled += (state.position - before).norm();
      // Midpoint of the step: sampling step ends would bias the mean lag by
      // half a step, and that bias grows with the frame period.
      sq_sum += (0.5 * (before + state.position) - ref).squaredNorm();
    }
    done = f + 1;
    if (options.record_path) out.path.push_back({static_cast<double>(done) / timing.refresh_hz, state});

    const double err = (state.position - ref).norm();
    outside = err > width ? outside + 1 : 0;
    if (!state.position.allFinite() || !layout.contains_particle(state.position) || outside > options.escape_frames) {
      out.escape_frame = f;
      break;
    }
  }
  const double elapsed = static_cast<double>(done) / timing.refresh_hz;
  out.frames = done;
  out.completed = !out.escape_frame.has_value();
  out.rms_tracking_error =
      std::sqrt(sq_sum / static_cast<double>(std::max<size_t>(done, 1) * static_cast<size_t>(substeps)));
  out.commanded_speed = elapsed > 0.0 ? commanded / elapsed : 0.0;
  out.particle_speed = elapsed > 0.0 ? travelled / elapsed : 0.0;
  return out;
}

ExperimentResult run_experiment(const ArrayLayout& layout, const MediumState& medium, const TrajectorySpec& spec,
                                const ControllerTiming& timing, const ParticleState& particle, int iterations,
                                const ExperimentOptions& options) {
  const double amplitude = options.source_amplitude > 0.0 ? options.source_amplitude : default_source_amplitude();
  const auto steering = TrapSteering::calibrate(layout, medium, particle, spec.height_mm, spec.extent_mm, amplitude);
  return run_experiment(layout, medium, spec, timing, particle, iterations, steering, options);
}

double max_stable_speed(const ArrayLayout& layout, const MediumState& medium, PathShape shape, double extent_mm,
                        double height_mm, const ControllerTiming& timing, const ParticleState& particle,
                        const SpeedSearchOptions& options) {
  const int iterations = options.iterations > 0 ? options.iterations : (shape == PathShape::Linear ? 10 : 5);
  const double amplitude = options.experiment.source_amplitude > 0.0 ? options.experiment.source_amplitude
                                                                     : default_source_amplitude();
  const auto steering = TrapSteering::calibrate(layout, medium, particle, height_mm, extent_mm, amplitude);
  auto passes = [&](double v) {
    TrajectorySpec spec{shape, extent_mm, v, v / timing.refresh_hz, height_mm};
    try {
      return run_experiment(layout, medium, spec, timing, particle, iterations, steering, options.experiment)
          .completed;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::UnstablePlan) return false;
      throw;
    }
  };

  const double budget = options.max_step_mm > 0.0 ? options.max_step_mm
                                                  : trap_width_mm(layout, medium, height_mm) / 2.0;
  const double cap = std::min(options.max_mm_s, budget * timing.refresh_hz);
  double lo = std::min(options.start_mm_s, cap);
  if (!passes(lo)) return 0.0;
  double hi = lo;
  while (true) {
    hi = std::min(2.0 * lo, cap);
    if (hi <= lo) return lo;
    if (!passes(hi)) break;
    lo = hi;
  }
  while ((hi - lo) > options.relative_tolerance * lo) {
    const double mid = 0.5 * (lo + hi);
    (passes(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace sonotrap

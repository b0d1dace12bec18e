#pragma once

#include <optional>
#include <vector>

#include "sonotrap/gorkov.hpp"

namespace sonotrap {

inline constexpr double kGravity = 9.81;           // m/s^2
inline constexpr double kAirViscosity = 1.81e-5;   // Pa s

struct ParticleState {
  Vec3 position = Vec3(0.0, 0.0, 100.0);  // mm
  Vec3 velocity = Vec3::Zero();           // mm/s
  double radius_mm = 0.5;
  double density = 29.63;  // kg/m^3

  double mass_kg() const;
  GorkovParams gorkov(double sound_speed = GorkovParams{}.particle_sound_speed) const;
  bool operator==(const ParticleState&) const = default;
};

struct DynamicsOptions {
  double viscosity = kAirViscosity;
  bool gravity = true;
};

/// Semi-implicit Euler for m a = F_arf + m g + F_drag (Stokes).
class ParticleIntegrator {
 public:
  explicit ParticleIntegrator(const ParticleState& particle, DynamicsOptions options = {});

  /// Total force in newtons; field may be null (no acoustic drive).
  Vec3 force(const AcousticField* field, const ParticleState& state) const;
  void step(const AcousticField* field, ParticleState& state, double dt_s) const;

  const GorkovParams& params() const { return params_; }

 private:
  GorkovParams params_;
  DynamicsOptions options_;
  double mass_;
  double drag_;  // N s/m
};

struct TrajectoryPoint {
  double t = 0.0;
  ParticleState state;
};

struct SimulationResult {
  std::vector<TrajectoryPoint> points;
  std::optional<size_t> escape_index;  // first point outside the particle region

  bool escaped() const { return escape_index.has_value(); }
};

/// Integrates under a fixed frame. Stops early when the particle leaves the
/// layout's particle region.
SimulationResult simulate_particle(const ArrayLayout& layout, const PhaseFrame& frame, const MediumState& medium,
                                   const ParticleState& particle, double dt_s, double duration_s,
                                   double source_amplitude, DynamicsOptions options = {});

/// Same, switching frames every schedule dwell. Requires dt <= dwell / 10.
SimulationResult simulate_particle(const ArrayLayout& layout, const MultiplexSchedule& schedule,
                                   const MediumState& medium, const ParticleState& particle, double dt_s,
                                   double duration_s, double source_amplitude, DynamicsOptions options = {});

struct Equilibrium {
  Vec3 position = Vec3::Zero();
  bool converged = false;
  bool stable = false;
  Eigen::Vector3d stiffness = Eigen::Vector3d::Zero();  // N/m, eigenvalues of -dF/dx (symmetric part)
  int iterations = 0;
};

/// Newton iteration on F_arf + m g = 0 with a finite-difference Jacobian.
Equilibrium find_equilibrium(const AcousticField& field, const ParticleState& particle, const Vec3& guess,
                             DynamicsOptions options = {});

/// Local minima of |p| along origin + s * direction for s in [s_min, s_max],
/// located by scanning at `scan_pitch` and refined by Brent's method.
std::vector<double> pressure_nodes(const AcousticField& field, const Vec3& origin, const Vec3& direction,
                                   double s_min, double s_max, double scan_pitch);

}  // namespace sonotrap

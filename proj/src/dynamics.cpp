#include "sonotrap/dynamics.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include "sonotrap/error.hpp"

namespace sonotrap {

double ParticleState::mass_kg() const {
  const double a = radius_mm * 1e-3;
  return density * 4.0 / 3.0 * std::numbers::pi * a * a * a;
}

GorkovParams ParticleState::gorkov(double sound_speed) const { return {radius_mm, density, sound_speed}; }

ParticleIntegrator::ParticleIntegrator(const ParticleState& particle, DynamicsOptions options)
    : params_(particle.gorkov()), options_(options), mass_(particle.mass_kg()) {
  if (!(particle.radius_mm > 0.0) || !(particle.density > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "particle radius and density must be positive");
  }
  drag_ = 6.0 * std::numbers::pi * options_.viscosity * particle.radius_mm * 1e-3;
}

Vec3 ParticleIntegrator::force(const AcousticField* field, const ParticleState& state) const {
  Vec3 f = -drag_ * state.velocity * 1e-3;
  if (options_.gravity) f.z() -= mass_ * kGravity;
  if (field) f += radiation_force(*field, params_, state.position);
  return f;
}

void ParticleIntegrator::step(const AcousticField* field, ParticleState& state, double dt_s) const {
  const Vec3 accel_mm = force(field, state) / mass_ * 1e3;
  state.velocity += accel_mm * dt_s;
  state.position += state.velocity * dt_s;
}

namespace {

void check_step(double dt_s, double duration_s) {
  if (!(dt_s > 0.0) || !(duration_s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
}

template <typename FieldAt>
SimulationResult integrate(const ArrayLayout& layout, const ParticleState& particle, double dt_s, double duration_s,
                           DynamicsOptions options, FieldAt&& field_at) {
  const ParticleIntegrator integrator(particle, options);
  SimulationResult out;
  ParticleState state = particle;
  const auto steps = static_cast<size_t>(std::llround(duration_s / dt_s));
  out.points.reserve(steps + 1);
  out.points.push_back({0.0, state});
  for (size_t i = 1; i <= steps; ++i) {
    const double t0 = static_cast<double>(i - 1) * dt_s;
    integrator.step(&field_at(t0), state, dt_s);
    out.points.push_back({static_cast<double>(i) * dt_s, state});
    if (!layout.contains_particle(state.position) || !state.position.allFinite()) {
      out.escape_index = out.points.size() - 1;
      break;
    }
  }
  return out;
}

}  // namespace

SimulationResult simulate_particle(const ArrayLayout& layout, const PhaseFrame& frame, const MediumState& medium,
                                   const ParticleState& particle, double dt_s, double duration_s,
                                   double source_amplitude, DynamicsOptions options) {
  check_step(dt_s, duration_s);
  const AcousticField field(layout, frame, medium, source_amplitude);
  return integrate(layout, particle, dt_s, duration_s, options, [&](double) -> const AcousticField& { return field; });
}

SimulationResult simulate_particle(const ArrayLayout& layout, const MultiplexSchedule& schedule,
                                   const MediumState& medium, const ParticleState& particle, double dt_s,
                                   double duration_s, double source_amplitude, DynamicsOptions options) {
  check_step(dt_s, duration_s);
  if (schedule.frames.empty()) throw Error(ErrorCode::InvalidArgument, "empty schedule");
  if (dt_s > schedule.dwell_s / 10.0 * (1.0 + 1e-12)) {
    throw Error(ErrorCode::InvalidArgument, "dt must not exceed a tenth of the frame dwell");
  }
  std::vector<AcousticField> fields;
  fields.reserve(schedule.frames.size());
  for (const auto& f : schedule.frames) fields.emplace_back(layout, f, medium, source_amplitude);
  return integrate(layout, particle, dt_s, duration_s, options,
                   [&](double t) -> const AcousticField& { return fields[schedule.index_at(t)]; });
}

Equilibrium find_equilibrium(const AcousticField& field, const ParticleState& particle, const Vec3& guess,
                             DynamicsOptions options) {
  options.viscosity = 0.0;  // static balance
  const ParticleIntegrator integrator(particle, options);
  const double lambda = field.wavelength_mm();
  const double max_step = lambda / 20.0;
  const double fd = lambda / 2000.0;

  auto force_at = [&](const Vec3& x) {
    ParticleState s = particle;
    s.position = x;
    s.velocity.setZero();
    return integrator.force(&field, s);
  };
  auto jacobian = [&](const Vec3& x) {
    Eigen::Matrix3d j;
    for (int i = 0; i < 3; ++i) {
      Vec3 e = Vec3::Zero();
      e[i] = fd;
      j.col(i) = (force_at(x + e) - force_at(x - e)) / (2.0 * fd);  // N/mm
    }
    return j;
  };

  Equilibrium out;
  Vec3 x = guess;
  for (int it = 1; it <= 60; ++it) {
    out.iterations = it;
    const Vec3 f = force_at(x);
    const Eigen::Matrix3d j = jacobian(x);
    Vec3 dx = j.fullPivLu().solve(-f);
    if (!dx.allFinite()) break;
    if (dx.norm() > max_step) dx *= max_step / dx.norm();
    x += dx;
    if (dx.norm() < 1e-10) {
      out.converged = true;
      break;
    }
  }
  out.position = x;
  const Eigen::Matrix3d j = jacobian(x);
  const Eigen::Matrix3d sym = -0.5 * (j + j.transpose()) * 1e3;  // N/m
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(sym);
  out.stiffness = eig.eigenvalues();
  out.stable = out.converged && out.stiffness.minCoeff() > 0.0;
  return out;
}

std::vector<double> pressure_nodes(const AcousticField& field, const Vec3& origin, const Vec3& direction,
                                   double s_min, double s_max, double scan_pitch) {
  if (!(scan_pitch > 0.0) || !(s_max > s_min)) throw Error(ErrorCode::InvalidArgument, "invalid node scan range");
  const Vec3 dir = direction.normalized();
  auto mag = [&](double s) { return std::abs(field.pressure(origin + s * dir)); };
  const auto n = static_cast<size_t>(std::floor((s_max - s_min) / scan_pitch)) + 1;
  std::vector<double> samples(n);
  for (size_t i = 0; i < n; ++i) samples[i] = mag(s_min + static_cast<double>(i) * scan_pitch);
  std::vector<double> nodes;
  for (size_t i = 1; i + 1 < n; ++i) {
    if (samples[i] < samples[i - 1] && samples[i] <= samples[i + 1]) {
      const double s = s_min + static_cast<double>(i) * scan_pitch;
      const auto [x, fx] = boost::math::tools::brent_find_minima(mag, s - scan_pitch, s + scan_pitch, 40);
      (void)fx;
      nodes.push_back(x);
    }
  }
  return nodes;
}

}  // namespace sonotrap

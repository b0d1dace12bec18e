#include "sonotrap/gorkov.hpp"

#include <cmath>
#include <numbers>

#include "sonotrap/error.hpp"

namespace sonotrap {

namespace {

void check_clearance(const AcousticField& field, const Vec3& point) {
  const double h = field.wavelength_mm() / 100.0;
  if (field.nearest_source_distance(point) < 2.0 * h) {
    throw Error(ErrorCode::Singularity, "potential evaluated within 2h of a source");
  }
}

}  // namespace

GorkovCoefficients gorkov_coefficients(const GorkovParams& params, const MediumState& medium, double carrier_hz) {
  if (!(params.particle_radius_mm > 0.0) || !(params.particle_density > 0.0) ||
      !(params.particle_sound_speed > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "particle radius, density and sound speed must be positive");
  }
  const double lambda = wavelength_mm(carrier_hz, medium);
  if (params.particle_radius_mm > lambda / 4.0) {
    throw Error(ErrorCode::InvalidArgument, "particle radius exceeds lambda/4; the small-sphere model does not apply");
  }
  const double rho = medium.density_air;
  const double c = medium.speed_of_sound;
  const double rp = params.particle_density;
  const double cp = params.particle_sound_speed;
  const double a = params.particle_radius_mm * 1e-3;
  const double omega = 2.0 * std::numbers::pi * carrier_hz;

  GorkovCoefficients out;
  out.f1 = 1.0 - (rho * c * c) / (rp * cp * cp);
  out.f2 = 2.0 * (rp - rho) / (2.0 * rp + rho);
  const double vol = std::numbers::pi * a * a * a;
  out.k1 = vol * out.f1 / (3.0 * rho * c * c);
  out.k2 = vol * out.f2 / (2.0 * rho * omega * omega);
  return out;
}

double gorkov_potential(const AcousticField& field, const GorkovParams& params, const Vec3& point) {
  check_clearance(field, point);
  const auto co = gorkov_coefficients(params, field.medium(), field.carrier_hz());
  const auto fd = field.derivatives(point, false);
  const double grad2 = fd.grad.squaredNorm() * 1e6;  // (Pa/mm)^2 -> (Pa/m)^2
  return co.k1 * std::norm(fd.p) - co.k2 * grad2;
}

Vec3 radiation_force(const AcousticField& field, const GorkovParams& params, const Vec3& point) {
  check_clearance(field, point);
  const auto co = gorkov_coefficients(params, field.medium(), field.carrier_hz());
  const auto fd = field.derivatives(point, true);
  // grad |P|^2 = 2 Re(conj(P) grad P); grad |grad P|^2 = 2 Re(H conj(grad P)).
  const Vec3 grad_p2 = 2.0 * (std::conj(fd.p) * fd.grad).real() * 1e3;
  const Vec3 grad_g2 = 2.0 * (fd.hess * fd.grad.conjugate()).real() * 1e9;
  return -(co.k1 * grad_p2 - co.k2 * grad_g2);
}

Vec3 radiation_force_central(const AcousticField& field, const GorkovParams& params, const Vec3& point,
                             double h_mm) {
  const double h = h_mm > 0.0 ? h_mm : field.wavelength_mm() / 100.0;
  Vec3 f;
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Zero();
    e[i] = h;
    const double up = gorkov_potential(field, params, point + e);
    const double dn = gorkov_potential(field, params, point - e);
    f[i] = -(up - dn) / (2.0 * h * 1e-3);
  }
  return f;
}

}  // namespace sonotrap

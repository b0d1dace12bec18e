#pragma once

#include "sonotrap/field.hpp"

namespace sonotrap {

/// Small sphere in the field. Defaults are the 1 mm expanded polystyrene bead;
/// the bead's sound speed is a nominal value (its compressibility term is
/// negligible next to air's).
struct GorkovParams {
  double particle_radius_mm = 0.5;
  double particle_density = 29.63;       // kg/m^3
  double particle_sound_speed = 900.0;   // m/s

  static GorkovParams eps_bead() { return {}; }
};

/// Contrast factors and prefactors for one particle in one medium.
struct GorkovCoefficients {
  double f1 = 0.0;
  double f2 = 0.0;
  double k1 = 0.0;  // pi a^3 f1 / (3 rho c^2)
  double k2 = 0.0;  // pi a^3 f2 / (2 rho omega^2)
};

/// Throws InvalidArgument for non-positive parameters or a radius above lambda/4.
GorkovCoefficients gorkov_coefficients(const GorkovParams& params, const MediumState& medium, double carrier_hz);

/// U = pi a^3 [ f1 |P|^2 / (3 rho c^2) - f2 |grad P|^2 / (2 rho omega^2) ] in joules,
/// with P the pressure phasor (peak amplitude). Throws Singularity closer than
/// 2h = lambda/50 to a source.
double gorkov_potential(const AcousticField& field, const GorkovParams& params, const Vec3& point);

/// -grad U in newtons, from the closed-form field Hessian.
Vec3 radiation_force(const AcousticField& field, const GorkovParams& params, const Vec3& point);

/// -grad U by central differences of the potential with step h (default lambda/100).
Vec3 radiation_force_central(const AcousticField& field, const GorkovParams& params, const Vec3& point,
                             double h_mm = 0.0);

}  // namespace sonotrap

#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sonotrap/geometry.hpp"
#include "sonotrap/medium.hpp"
#include "sonotrap/phase_engine.hpp"

namespace sonotrap {

using Complex = std::complex<double>;
using Vec3c = Eigen::Vector3cd;
using Mat3c = Eigen::Matrix3cd;

inline constexpr double kReferencePressurePa = 20e-6;
// Peak on-focus level of the 8x8 array at R = 100 mm.
inline constexpr double kCalibrationSplDb = 172.0;

/// Piston directivity 2 J1(s)/s as a function of q = s^2, with its first two
/// q-derivatives.
struct Directivity {
  double g = 1.0;
  double dg = 0.0;
  double d2g = 0.0;
};
Directivity piston_directivity_q(double q);

/// 2 J1(ka sin(theta)) / (ka sin(theta)).
double piston_directivity(double ka, double sin_theta);

/// 20 log10(|p| / sqrt(2) / 20 uPa); -infinity for zero pressure.
double spl_db(Complex pressure);
double spl_db(double magnitude);
/// Peak pressure amplitude giving the level.
double pressure_for_spl(double spl);

struct FieldSample {
  Vec3 point;
  Complex pressure;
};

/// Pressure and its spatial derivatives, per millimetre.
struct FieldDerivatives {
  Complex p;
  Vec3c grad = Vec3c::Zero();
  Mat3c hess = Mat3c::Zero();
};

/// Continuous-wave field of one emission pattern: each emitter is a baffled
/// piston radiating (A/d) D(theta) exp(j(kd - phi)); a reflector adds mirror
/// images with the same drive (rigid wall). The emitted phase is the
/// quantized register value, as the hardware produces it.
class AcousticField {
 public:
  AcousticField(const ArrayLayout& layout, const PhaseFrame& frame, const MediumState& medium,
                double source_amplitude);

  /// Throws Singularity at a source center.
  Complex pressure(const Vec3& point) const;
  std::vector<Complex> pressure(std::span<const Vec3> points) const;
  FieldDerivatives derivatives(const Vec3& point, bool with_hessian = true) const;

  double wavelength_mm() const { return lambda_mm_; }
  double wavenumber() const { return k_; }  // rad/mm
  double carrier_hz() const { return carrier_hz_; }
  double source_amplitude() const { return amplitude_; }
  const MediumState& medium() const { return medium_; }
  size_t source_count() const { return px_.size(); }
  /// Smallest distance from the point to any (real or image) source center.
  double nearest_source_distance(const Vec3& point) const;

 private:
  void add_source(const Vec3& pos, const Vec3& normal, double radius, double phase);

  MediumState medium_;
  double carrier_hz_;
  double lambda_mm_;
  double k_;
  double amplitude_;
  // Sources in structure-of-arrays form.
  std::vector<double> px_, py_, pz_, nx_, ny_, nz_, kappa2_;
  std::vector<Complex> drive_;  // A exp(-j phi)
};

enum class PlaneAxis { XY, XZ, YZ };
std::string to_string(PlaneAxis axis);
PlaneAxis plane_axis_from_string(const std::string& s);

/// Axis-aligned sampling plane. (u, v) are (x, y), (x, z) or (y, z).
struct SlicePlane {
  PlaneAxis axis = PlaneAxis::XZ;
  double offset = 0.0;  // coordinate along the normal axis, mm
  double u_min = -50.0, u_max = 50.0;
  double v_min = 50.0, v_max = 150.0;
  double pitch = 1.0;  // mm

  size_t nu() const;
  size_t nv() const;
  Vec3 point(size_t iu, size_t iv) const;
};

struct FieldSlice {
  SlicePlane plane;
  size_t nu = 0, nv = 0;
  std::vector<Complex> values;  // row-major in v: values[iv * nu + iu]

  Complex at(size_t iu, size_t iv) const { return values[iv * nu + iu]; }
};

FieldSlice compute_slice(const AcousticField& field, const SlicePlane& plane);

/// Keeps every n-th sample so that neither side exceeds max_side.
FieldSlice decimate(const FieldSlice& slice, size_t max_side);

struct FocalWidth {
  double width_6db = 0.0;  // mm
  double width_3db = 0.0;  // mm
  double focus_spl = 0.0;  // dB
};

/// Full width of the focal spot along the x line through `focus`, at -6 and
/// -3 dB relative to the on-focus level. The line is scanned at `pitch`
/// (<= lambda/4) out to +-half_span; crossings are refined by root finding.
FocalWidth measure_focal_width(const AcousticField& field, const Vec3& focus, double half_span_mm = 60.0,
                               double pitch_mm = 0.5);

/// Source amplitude (Pa mm) that puts `target_spl` at the focus of a frame
/// computed for `focus` on this layout.
double calibrate_source_amplitude(const ArrayLayout& layout, const MediumState& medium, const Vec3& focus,
                                  double target_spl = kCalibrationSplDb);

/// Medium at which the 40 kHz wavelength is 8.5 mm (c = 340 m/s).
MediumState calibration_medium();

/// Amplitude calibrated once on the flat 8x8 array focused at (0, 0, 100).
double default_source_amplitude();

}  // namespace sonotrap

#include "sonotrap/field.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/tools/roots.hpp>

#include "sonotrap/error.hpp"

namespace sonotrap {

namespace {

constexpr int kSeriesTerms = 34;
// Below this q the power series is accurate to ~1e-15 absolute.
constexpr double kSeriesLimit = 64.0;
constexpr double kSingularDistanceMm = 1e-6;

struct SeriesTables {
  std::array<double, kSeriesTerms> g{}, dg{}, d2g{};

  SeriesTables() {
    // 2 J1(s)/s = sum_m (-q/4)^m / (m! (m+1)!), q = s^2
    std::array<double, kSeriesTerms + 2> t{};
    t[0] = 1.0;
    for (int m = 1; m < kSeriesTerms + 2; ++m) t[m] = t[m - 1] * -0.25 / (m * (m + 1.0));
    for (int j = 0; j < kSeriesTerms; ++j) {
      g[j] = t[j];
      dg[j] = (j + 1.0) * t[j + 1];
      d2g[j] = (j + 2.0) * (j + 1.0) * t[j + 2];
    }
  }
};

const SeriesTables& tables() {
  static const SeriesTables t;
  return t;
}

// Terms needed for |(q/4)^m / (m! (m+1)!)| < 1e-17.
int series_length(double q) {
  if (q < 4.0) return 13;
  if (q < 16.0) return 17;
  if (q < 36.0) return 21;
  return 27;
}

double horner(const std::array<double, kSeriesTerms>& c, double q, int terms) {
  double acc = 0.0;
  for (int j = terms - 1; j >= 0; --j) acc = acc * q + c[j];
  return acc;
}

}  // namespace

Directivity piston_directivity_q(double q) {
  if (q < 0.0) throw Error(ErrorCode::InvalidArgument, "directivity argument must be non-negative");
  if (q < kSeriesLimit) {
    const auto& t = tables();
    const int n = series_length(q);
    return {horner(t.g, q, n), horner(t.dg, q, n), horner(t.d2g, q, n)};
  }
  const double s = std::sqrt(q);
  const double j1 = std::cyl_bessel_j(1.0, s);
  const double j2 = std::cyl_bessel_j(2.0, s);
  const double j3 = std::cyl_bessel_j(3.0, s);
  return {2.0 * j1 / s, -j2 / q, j3 / (2.0 * q * s)};
}

double piston_directivity(double ka, double sin_theta) {
  const double s = ka * sin_theta;
  return piston_directivity_q(s * s).g;
}

double spl_db(double magnitude) {
  if (magnitude <= 0.0) return -std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(magnitude / std::numbers::sqrt2 / kReferencePressurePa);
}

double spl_db(Complex pressure) { return spl_db(std::abs(pressure)); }

double pressure_for_spl(double spl) {
  return kReferencePressurePa * std::numbers::sqrt2 * std::pow(10.0, spl / 20.0);
}

AcousticField::AcousticField(const ArrayLayout& layout, const PhaseFrame& frame, const MediumState& medium,
                             double source_amplitude)
    : medium_(medium), amplitude_(source_amplitude) {
  if (!(source_amplitude > 0.0)) throw Error(ErrorCode::InvalidArgument, "source amplitude must be positive");
  if (frame.channel_ids.size() != frame.delays_cycles.size() || frame.channel_ids.size() != layout.emitter_count()) {
    throw Error(ErrorCode::FrameShape, "frame does not match the layout's emitters");
  }
  carrier_hz_ = layout.emitter_carrier();
  lambda_mm_ = sonotrap::wavelength_mm(carrier_hz_, medium);
  k_ = 2.0 * std::numbers::pi / lambda_mm_;

  for (size_t i = 0; i < frame.channel_ids.size(); ++i) {
    const auto& t = layout.transducer(frame.channel_ids[i]);
    if (!t.is_emitter()) throw Error(ErrorCode::FrameShape, "frame drives a receiver channel");
    add_source(t.position, t.normal, t.radius, frame.quantized_phase(i));
  }
  if (const auto zr = layout.reflector_z()) {
    const size_t n = px_.size();
    for (size_t i = 0; i < n; ++i) {
      const auto& t = layout.transducer(frame.channel_ids[i]);
      Vec3 pos = t.position;
      pos.z() = 2.0 * *zr - pos.z();
      Vec3 normal = t.normal;
      normal.z() = -normal.z();
      add_source(pos, normal, t.radius, frame.quantized_phase(i));
    }
  }
}

void AcousticField::add_source(const Vec3& pos, const Vec3& normal, double radius, double phase) {
  px_.push_back(pos.x());
  py_.push_back(pos.y());
  pz_.push_back(pos.z());
  nx_.push_back(normal.x());
  ny_.push_back(normal.y());
  nz_.push_back(normal.z());
  const double kappa = k_ * radius;
  kappa2_.push_back(kappa * kappa);
  drive_.push_back(std::polar(amplitude_, -phase));
}

double AcousticField::nearest_source_distance(const Vec3& point) const {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < px_.size(); ++i) {
    const double dx = point.x() - px_[i], dy = point.y() - py_[i], dz = point.z() - pz_[i];
    best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  return best;
}

Complex AcousticField::pressure(const Vec3& point) const {
  Complex sum = 0.0;
  for (size_t i = 0; i < px_.size(); ++i) {
    const double rx = point.x() - px_[i], ry = point.y() - py_[i], rz = point.z() - pz_[i];
    const double d = std::sqrt(rx * rx + ry * ry + rz * rz);
    if (d < kSingularDistanceMm) throw Error(ErrorCode::Singularity, "field evaluated at a source center");
    const double c = (rx * nx_[i] + ry * ny_[i] + rz * nz_[i]) / d;
    if (c <= 0.0) continue;
    const double g = piston_directivity_q(kappa2_[i] * (1.0 - c * c)).g;
    sum += drive_[i] * std::polar(g / d, k_ * d);
  }
  return sum;
}

std::vector<Complex> AcousticField::pressure(std::span<const Vec3> points) const {
  std::vector<Complex> out(points.size());
  for (size_t i = 0; i < points.size(); ++i) out[i] = pressure(points[i]);
  return out;
}

FieldDerivatives AcousticField::derivatives(const Vec3& point, bool with_hessian) const {
  // Per source T = R G(q) with R = A e^{j(kd - phi)}/d, u = r/d, c = u.n,
  // q = kappa^2 (1 - c^2), alpha = jk - 1/d:
  //   grad T = R (G alpha u + G' grad q)
  //   hess T = R [ G (alpha^2 + 1/d^2 - alpha/d) u u^T + G alpha/d I
  //                + G' alpha (u grad q^T + grad q u^T) + hess G ]
  // with hess G = G'' grad q grad q^T + G' hess q.
  static constexpr int kPairs[6][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};
  FieldDerivatives out;
  Complex grad[3] = {0.0, 0.0, 0.0};
  Complex hess[6] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  for (size_t i = 0; i < px_.size(); ++i) {
    const double r[3] = {point.x() - px_[i], point.y() - py_[i], point.z() - pz_[i]};
    const double d = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    if (d < kSingularDistanceMm) throw Error(ErrorCode::Singularity, "field evaluated at a source center");
    const double inv_d = 1.0 / d;
    const double n[3] = {nx_[i], ny_[i], nz_[i]};
    const double u[3] = {r[0] * inv_d, r[1] * inv_d, r[2] * inv_d};
    const double c = u[0] * n[0] + u[1] * n[1] + u[2] * n[2];
    if (c <= 0.0) continue;
    const double kap2 = kappa2_[i];
    const auto dir = piston_directivity_q(kap2 * (1.0 - c * c));

    const Complex rr = drive_[i] * std::polar(inv_d, k_ * d);
    const Complex alpha(-inv_d, k_);
    double gc[3], gq[3];
    for (int a = 0; a < 3; ++a) {
      gc[a] = (n[a] - c * u[a]) * inv_d;
      gq[a] = -2.0 * kap2 * c * gc[a];
    }

    out.p += rr * dir.g;
    const Complex ga = dir.g * alpha;
    for (int a = 0; a < 3; ++a) grad[a] += rr * (ga * u[a] + dir.dg * gq[a]);
    if (!with_hessian) continue;

    const double inv_d2 = inv_d * inv_d;
    const Complex gamma = alpha * inv_d;
    const Complex a_uu = dir.g * (alpha * alpha + inv_d2 - gamma);
    const Complex a_eye = dir.g * gamma;
    const Complex a_mix = dir.dg * alpha;
    for (int e = 0; e < 6; ++e) {
      const int a = kPairs[e][0], b = kPairs[e][1];
      const double delta = a == b ? 1.0 : 0.0;
      const double hc = (-(n[a] * u[b] + u[a] * n[b]) - c * delta + 3.0 * c * u[a] * u[b]) * inv_d2;
      const double hq = -2.0 * kap2 * (gc[a] * gc[b] + c * hc);
      const double hg = dir.d2g * gq[a] * gq[b] + dir.dg * hq;
      const Complex m = a_uu * (u[a] * u[b]) + a_eye * delta + a_mix * (u[a] * gq[b] + gq[a] * u[b]) + hg;
      hess[e] += rr * m;
    }
  }
  for (int a = 0; a < 3; ++a) out.grad[a] = grad[a];
  if (with_hessian) {
    for (int e = 0; e < 6; ++e) {
      out.hess(kPairs[e][0], kPairs[e][1]) = hess[e];
      out.hess(kPairs[e][1], kPairs[e][0]) = hess[e];
    }
  }
  return out;
}

std::string to_string(PlaneAxis axis) {
  switch (axis) {
    case PlaneAxis::XY: return "xy";
    case PlaneAxis::XZ: return "xz";
    case PlaneAxis::YZ: return "yz";
  }
  return "?";
}

PlaneAxis plane_axis_from_string(const std::string& s) {
  if (s == "xy") return PlaneAxis::XY;
  if (s == "xz") return PlaneAxis::XZ;
  if (s == "yz") return PlaneAxis::YZ;
  throw Error(ErrorCode::InvalidArgument, "unknown plane '" + s + "' (expected xy, xz or yz)");
}

size_t SlicePlane::nu() const { return static_cast<size_t>(std::floor((u_max - u_min) / pitch + 1e-9)) + 1; }
size_t SlicePlane::nv() const { return static_cast<size_t>(std::floor((v_max - v_min) / pitch + 1e-9)) + 1; }

Vec3 SlicePlane::point(size_t iu, size_t iv) const {
  const double u = u_min + static_cast<double>(iu) * pitch;
  const double v = v_min + static_cast<double>(iv) * pitch;
  switch (axis) {
    case PlaneAxis::XY: return {u, v, offset};
    case PlaneAxis::XZ: return {u, offset, v};
    case PlaneAxis::YZ: return {offset, u, v};
  }
  return {};
}

FieldSlice compute_slice(const AcousticField& field, const SlicePlane& plane) {
  if (!(plane.pitch > 0.0) || plane.u_max < plane.u_min || plane.v_max < plane.v_min) {
    throw Error(ErrorCode::InvalidArgument, "slice needs a positive pitch and ordered bounds");
  }
  FieldSlice slice;
  slice.plane = plane;
  slice.nu = plane.nu();
  slice.nv = plane.nv();
  slice.values.resize(slice.nu * slice.nv);
  for (size_t iv = 0; iv < slice.nv; ++iv) {
    for (size_t iu = 0; iu < slice.nu; ++iu) slice.values[iv * slice.nu + iu] = field.pressure(plane.point(iu, iv));
  }
  return slice;
}

FieldSlice decimate(const FieldSlice& slice, size_t max_side) {
  if (max_side < 1) throw Error(ErrorCode::InvalidArgument, "decimation target must be >= 1");
  const size_t stride = std::max<size_t>(1, (std::max(slice.nu, slice.nv) + max_side - 1) / max_side);
  if (stride == 1) return slice;
  FieldSlice out;
  out.plane = slice.plane;
  out.plane.pitch = slice.plane.pitch * static_cast<double>(stride);
  out.nu = (slice.nu + stride - 1) / stride;
  out.nv = (slice.nv + stride - 1) / stride;
  out.plane.u_max = out.plane.u_min + out.plane.pitch * static_cast<double>(out.nu - 1);
  out.plane.v_max = out.plane.v_min + out.plane.pitch * static_cast<double>(out.nv - 1);
  out.values.reserve(out.nu * out.nv);
  for (size_t iv = 0; iv < slice.nv; iv += stride) {
    for (size_t iu = 0; iu < slice.nu; iu += stride) out.values.push_back(slice.at(iu, iv));
  }
  return out;
}

FocalWidth measure_focal_width(const AcousticField& field, const Vec3& focus, double half_span_mm, double pitch_mm) {
  if (!(pitch_mm > 0.0) || pitch_mm > field.wavelength_mm() / 4.0) {
    throw Error(ErrorCode::InvalidArgument, "scan pitch must be in (0, lambda/4]");
  }
  const double p0 = std::abs(field.pressure(focus));
  if (p0 <= 0.0) throw Error(ErrorCode::InvalidArgument, "no pressure at the focus");

  auto ratio = [&](double dx) { return std::abs(field.pressure(focus + Vec3(dx, 0.0, 0.0))) / p0; };
  auto crossing = [&](double level, double sign) {
    double prev = 0.0;
    for (double s = pitch_mm; s <= half_span_mm + 1e-12; s += pitch_mm) {
      if (ratio(sign * s) < level) {
        boost::math::tools::eps_tolerance<double> tol(48);
        std::uintmax_t iters = 100;
        auto f = [&](double x) { return ratio(sign * x) - level; };
        const auto [lo, hi] = boost::math::tools::toms748_solve(f, prev, s, tol, iters);
        return 0.5 * (lo + hi);
      }
      prev = s;
    }
    std::ostringstream os;
    os << "no " << 20.0 * std::log10(level) << " dB crossing within +-" << half_span_mm << " mm of the focus";
    throw Error(ErrorCode::SliceTooSmall, os.str());
  };

  const double l6 = std::pow(10.0, -6.0 / 20.0);
  const double l3 = std::pow(10.0, -3.0 / 20.0);
  FocalWidth out;
  out.width_6db = crossing(l6, 1.0) + crossing(l6, -1.0);
  out.width_3db = crossing(l3, 1.0) + crossing(l3, -1.0);
  out.focus_spl = spl_db(p0);
  return out;
}

double calibrate_source_amplitude(const ArrayLayout& layout, const MediumState& medium, const Vec3& focus,
                                  double target_spl) {
  const auto quant = QuantizationConfig::for_layout(layout);
  const auto frame = compute_frame(layout, FocalCommand{focus}, medium, quant);
  const AcousticField unit(layout, frame, medium, 1.0);
  const double p = std::abs(unit.pressure(focus));
  if (p <= 0.0) throw Error(ErrorCode::InvalidArgument, "calibration focus receives no pressure");
  return pressure_for_spl(target_spl) / p;
}

MediumState calibration_medium() { return make_medium((340.0 - 331.4) / 0.6); }

double default_source_amplitude() {
  static const double amplitude =
      calibrate_source_amplitude(presets::flat_8x8(), calibration_medium(), Vec3(0.0, 0.0, 100.0));
  return amplitude;
}

}  // namespace sonotrap

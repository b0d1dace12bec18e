#include "sonotrap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "sonotrap/error.hpp"

namespace sonotrap {

namespace {

constexpr double kUnitTolerance = 1e-9;
constexpr double kFlatZMin = 20.0;
constexpr double kFlatZMax = 250.0;
// Clearance between neighbouring apertures on a cap.
constexpr double kCapGapMm = 1.0;

void check_no_overlap(std::span<const Transducer> ts) {
  for (size_t i = 0; i < ts.size(); ++i) {
    for (size_t j = i + 1; j < ts.size(); ++j) {
      const double spacing = (ts[i].position - ts[j].position).norm();
      if (spacing < ts[i].radius + ts[j].radius - 1e-9) {
        std::ostringstream os;
        os << "transducers " << ts[i].id << " and " << ts[j].id << " overlap (center spacing " << spacing
           << " mm)";
        throw Error(ErrorCode::LayoutInfeasible, os.str());
      }
    }
  }
}

}  // namespace

std::string WorkingVolume::describe() const {
  std::ostringstream os;
  os << "x in [" << x.lo << ", " << x.hi << "], y in [" << y.lo << ", " << y.hi << "], z in [" << z.lo << ", "
     << z.hi << "] mm";
  return os.str();
}

double aperture_side_length(std::span<const Transducer> transducers) {
  if (transducers.empty()) return 0.0;
  double xmin = transducers.front().position.x(), xmax = xmin;
  double ymin = transducers.front().position.y(), ymax = ymin;
  double diameter = 0.0;
  for (const auto& t : transducers) {
    xmin = std::min(xmin, t.position.x());
    xmax = std::max(xmax, t.position.x());
    ymin = std::min(ymin, t.position.y());
    ymax = std::max(ymax, t.position.y());
    diameter = std::max(diameter, 2.0 * t.radius);
  }
  return std::max(xmax - xmin, ymax - ymin) + diameter;
}

ArrayLayout::ArrayLayout(ArrayKind kind, std::vector<Transducer> transducers, std::optional<double> reflector_z,
                         std::optional<double> cap_radius, std::optional<double> side_length)
    : kind_(kind),
      transducers_(std::move(transducers)),
      reflector_z_(reflector_z),
      cap_radius_(cap_radius) {
  if (transducers_.empty()) throw Error(ErrorCode::InvalidArgument, "layout has no transducers");
  for (size_t i = 0; i < transducers_.size(); ++i) {
    const auto& t = transducers_[i];
    if (t.id != static_cast<int>(i)) {
      throw Error(ErrorCode::InvalidArgument, "channel ids must be contiguous from 0");
    }
    if (std::abs(t.normal.norm() - 1.0) > kUnitTolerance) {
      throw Error(ErrorCode::InvalidArgument, "transducer " + std::to_string(t.id) + " normal is not unit length");
    }
    if (!(t.radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "aperture radius must be positive");
    if (!(t.carrier_hz > 0.0)) throw Error(ErrorCode::InvalidArgument, "carrier frequency must be positive");
  }
  if (kind_ == ArrayKind::FlatWithReflector) {
    if (!reflector_z_) throw Error(ErrorCode::InvalidArgument, "reflector layout without reflector height");
    for (const auto& t : transducers_) {
      if (!(*reflector_z_ > t.position.z())) {
        throw Error(ErrorCode::InvalidArgument, "reflector must lie above every transducer");
      }
    }
    if (!(*reflector_z_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "reflector height must be positive");
  } else if (reflector_z_) {
    throw Error(ErrorCode::InvalidArgument, "only FlatWithReflector layouts carry a reflector");
  }
  if ((kind_ == ArrayKind::SphericalCap || kind_ == ArrayKind::DoubleSided) && !cap_radius_) {
    throw Error(ErrorCode::InvalidArgument, "spherical cap layout without cap radius");
  }
  side_length_ = side_length ? *side_length : aperture_side_length(transducers_);
  if (!(side_length_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "side length must be positive");
}

std::vector<int> ArrayLayout::emitter_ids() const {
  std::vector<int> ids;
  for (const auto& t : transducers_) {
    if (t.is_emitter()) ids.push_back(t.id);
  }
  return ids;
}

std::vector<int> ArrayLayout::receiver_ids() const {
  std::vector<int> ids;
  for (const auto& t : transducers_) {
    if (!t.is_emitter()) ids.push_back(t.id);
  }
  return ids;
}

size_t ArrayLayout::emitter_count() const {
  return static_cast<size_t>(
      std::count_if(transducers_.begin(), transducers_.end(), [](const Transducer& t) { return t.is_emitter(); }));
}

double ArrayLayout::emitter_carrier() const {
  std::optional<double> carrier;
  for (const auto& t : transducers_) {
    if (!t.is_emitter()) continue;
    if (carrier && *carrier != t.carrier_hz) {
      throw Error(ErrorCode::InvalidArgument, "emitters are driven at more than one carrier");
    }
    carrier = t.carrier_hz;
  }
  if (!carrier) throw Error(ErrorCode::InvalidArgument, "layout has no emitters");
  return *carrier;
}

Vec3 ArrayLayout::center() const {
  if (cap_radius_) return Vec3(0.0, 0.0, *cap_radius_);
  Vec3 sum = Vec3::Zero();
  for (const auto& t : transducers_) sum += t.position;
  return sum / static_cast<double>(transducers_.size());
}

WorkingVolume ArrayLayout::working_volume() const {
  const Vec3 c = center();
  switch (kind_) {
    case ArrayKind::Flat: {
      const double half = side_length_ / 2.0;
      return {{c.x() - half, c.x() + half}, {c.y() - half, c.y() + half}, {c.z() + kFlatZMin, c.z() + kFlatZMax}};
    }
    case ArrayKind::FlatWithReflector: {
      const double half = side_length_ / 2.0;
      return {{c.x() - half, c.x() + half},
              {c.y() - half, c.y() + half},
              {c.z() + kFlatZMin, 2.0 * *reflector_z_ - c.z()}};
    }
    case ArrayKind::SphericalCap:
    case ArrayKind::DoubleSided: {
      const double half = *cap_radius_ / 2.0;
      return {{c.x() - half, c.x() + half}, {c.y() - half, c.y() + half}, {c.z() - half, c.z() + half}};
    }
  }
  return {};
}

bool ArrayLayout::contains_particle(const Vec3& p) const {
  if (!working_volume().contains(p)) return false;
  return !reflector_z_ || p.z() < *reflector_z_;
}

std::string to_string(ArrayKind kind) {
  switch (kind) {
    case ArrayKind::Flat: return "Flat";
    case ArrayKind::FlatWithReflector: return "FlatWithReflector";
    case ArrayKind::SphericalCap: return "SphericalCap";
    case ArrayKind::DoubleSided: return "DoubleSided";
  }
  return "Flat";
}

ArrayKind array_kind_from_string(const std::string& s) {
  if (s == "Flat") return ArrayKind::Flat;
  if (s == "FlatWithReflector") return ArrayKind::FlatWithReflector;
  if (s == "SphericalCap") return ArrayKind::SphericalCap;
  if (s == "DoubleSided") return ArrayKind::DoubleSided;
  throw Error(ErrorCode::Parse, "unknown array kind '" + s + "'");
}

ArrayLayout build_flat_array(int nx, int ny, double pitch_mm, double carrier_hz, double aperture_radius_mm) {
  if (nx < 1 || ny < 1) throw Error(ErrorCode::InvalidArgument, "grid dimensions must be >= 1");
  if (!(pitch_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "pitch must be positive");
  std::vector<Transducer> ts;
  ts.reserve(static_cast<size_t>(nx * ny));
  const double x0 = -(nx - 1) / 2.0 * pitch_mm;
  const double y0 = -(ny - 1) / 2.0 * pitch_mm;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      Transducer t;
      t.id = iy * nx + ix;
      t.position = Vec3(x0 + ix * pitch_mm, y0 + iy * pitch_mm, 0.0);
      t.normal = Vec3::UnitZ();
      t.radius = aperture_radius_mm;
      t.carrier_hz = carrier_hz;
      ts.push_back(t);
    }
  }
  return ArrayLayout(ArrayKind::Flat, std::move(ts), std::nullopt, std::nullopt, std::max(nx, ny) * pitch_mm);
}

namespace {

// Ring packing around the +z pole of a sphere centered at `center`.
// Returns (polar angle, azimuth) pairs.
std::vector<std::pair<double, double>> cap_angles(double radius, int count, double spacing) {
  std::vector<std::pair<double, double>> out;
  if (count <= 0) return out;
  out.emplace_back(0.0, 0.0);
  const double dtheta = 2.0 * std::asin(std::min(1.0, spacing / (2.0 * radius)));
  int ring = 1;
  while (static_cast<int>(out.size()) < count) {
    const double theta = ring * dtheta;
    if (theta > std::numbers::pi / 2.0 + 1e-12) {
      throw Error(ErrorCode::LayoutInfeasible, "transducers do not fit on a hemispherical cap");
    }
    const double ring_radius = radius * std::sin(theta);
    // Chord between azimuthal neighbours must be >= spacing.
    const double ratio = std::min(1.0, spacing / (2.0 * ring_radius));
    const int capacity = static_cast<int>(std::floor(std::numbers::pi / std::asin(ratio)));
    const int n = std::min(capacity, count - static_cast<int>(out.size()));
    for (int j = 0; j < n; ++j) out.emplace_back(theta, 2.0 * std::numbers::pi * j / n);
    ++ring;
  }
  return out;
}

}  // namespace

ArrayLayout build_spherical_cap(double cap_radius_mm, int count, double carrier_hz, bool double_sided,
                                double aperture_radius_mm) {
  if (!(cap_radius_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "cap radius must be positive");
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "count must be >= 1");
  if (double_sided && count % 2 != 0) throw Error(ErrorCode::InvalidArgument, "double-sided cap needs an even count");

  const Vec3 center(0.0, 0.0, cap_radius_mm);
  const int per_side = double_sided ? count / 2 : count;
  const auto angles = cap_angles(cap_radius_mm, per_side, 2.0 * aperture_radius_mm + kCapGapMm);

  std::vector<Transducer> ts;
  ts.reserve(static_cast<size_t>(count));
  auto place = [&](double theta, double phi, double zsign) {
    const Vec3 dir(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), zsign * std::cos(theta));
    Transducer t;
    t.id = static_cast<int>(ts.size());
    t.position = center + cap_radius_mm * dir;
    t.normal = -dir.normalized();
    t.radius = aperture_radius_mm;
    t.carrier_hz = carrier_hz;
    ts.push_back(t);
  };
  for (const auto& [theta, phi] : angles) place(theta, phi, 1.0);
  if (double_sided) {
    for (const auto& [theta, phi] : angles) place(theta, phi, -1.0);
  }
  check_no_overlap(ts);
  return ArrayLayout(double_sided ? ArrayKind::DoubleSided : ArrayKind::SphericalCap, std::move(ts), std::nullopt,
                     cap_radius_mm);
}

ArrayLayout add_reflector(const ArrayLayout& layout, double z_mm) {
  if (layout.kind() != ArrayKind::Flat) {
    throw Error(ErrorCode::InvalidArgument, "a reflector can only be added to a flat array");
  }
  for (const auto& t : layout.transducers()) {
    if (!(z_mm > t.position.z())) {
      throw Error(ErrorCode::InvalidArgument, "reflector at z=" + std::to_string(z_mm) + " mm is below the array");
    }
  }
  return ArrayLayout(ArrayKind::FlatWithReflector, layout.transducers(), z_mm, std::nullopt, layout.side_length());
}

ArrayLayout mark_receivers(const ArrayLayout& layout, std::span<const int> ids, double receiver_carrier_hz) {
  if (ids.empty()) return layout;
  auto ts = layout.transducers();
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(ts.size())) {
      throw Error(ErrorCode::InvalidArgument, "no channel " + std::to_string(id));
    }
    ts[static_cast<size_t>(id)].role = TransducerRole::Receiver;
    ts[static_cast<size_t>(id)].carrier_hz = receiver_carrier_hz;
  }
  const auto receivers = std::count_if(ts.begin(), ts.end(), [](const Transducer& t) { return !t.is_emitter(); });
  if (receivers > kMaxReceivers) {
    throw Error(ErrorCode::AdcChannelLimit,
                std::to_string(receivers) + " receivers requested, the ADC samples at most " +
                    std::to_string(kMaxReceivers));
  }
  return ArrayLayout(layout.kind(), std::move(ts), layout.reflector_z(), layout.cap_radius(), layout.side_length());
}

ArrayLayout add_receivers(const ArrayLayout& layout, std::span<const Vec3> positions, std::span<const Vec3> normals,
                          double receiver_carrier_hz, double aperture_radius_mm) {
  if (positions.size() != normals.size()) {
    throw Error(ErrorCode::InvalidArgument, "receiver positions and normals differ in length");
  }
  auto ts = layout.transducers();
  for (size_t i = 0; i < positions.size(); ++i) {
    Transducer t;
    t.id = static_cast<int>(ts.size());
    t.position = positions[i];
    t.normal = normals[i].normalized();
    t.radius = aperture_radius_mm;
    t.carrier_hz = receiver_carrier_hz;
    t.role = TransducerRole::Receiver;
    ts.push_back(t);
  }
  const auto receivers = std::count_if(ts.begin(), ts.end(), [](const Transducer& t) { return !t.is_emitter(); });
  if (receivers > kMaxReceivers) {
    throw Error(ErrorCode::AdcChannelLimit, "the ADC samples at most " + std::to_string(kMaxReceivers) + " receivers");
  }
  check_no_overlap(ts);
  return ArrayLayout(layout.kind(), std::move(ts), layout.reflector_z(), layout.cap_radius(), layout.side_length());
}

namespace presets {

ArrayLayout flat_8x8(double carrier_hz) { return build_flat_array(8, 8, kFlatPitchMm, carrier_hz); }

ArrayLayout flat_8x8_reflector(double reflector_z_mm, double carrier_hz) {
  return add_reflector(flat_8x8(carrier_hz), reflector_z_mm);
}

ArrayLayout spherical_cap_64(double carrier_hz) { return build_spherical_cap(kCapRadiusMm, 64, carrier_hz, false); }

ArrayLayout double_sided_cap_64(double carrier_hz) {
  return build_spherical_cap(kCapRadiusMm, 64, carrier_hz, true);
}

ArrayLayout dual_frequency_cap_66() {
  const auto cap = double_sided_cap_64(kCarrier25k);
  // Receivers sit one ring outside the top cap's last ring, west and east.
  double max_theta = 0.0;
  const Vec3 center = cap.center();
  for (const auto& t : cap.transducers()) {
    const Vec3 d = (t.position - center).normalized();
    if (d.z() > 0.0) max_theta = std::max(max_theta, std::acos(std::clamp(d.z(), -1.0, 1.0)));
  }
  const double spacing = 2.0 * kDefaultApertureRadiusMm + kCapGapMm;
  const double theta = max_theta + 2.0 * std::asin(spacing / (2.0 * kCapRadiusMm));
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  for (double sx : {-1.0, 1.0}) {
    const Vec3 dir(sx * std::sin(theta), 0.0, std::cos(theta));
    positions.push_back(center + kCapRadiusMm * dir);
    normals.push_back(-dir);
  }
  return add_receivers(cap, positions, normals, kCarrier40k);
}

}  // namespace presets

}  // namespace sonotrap

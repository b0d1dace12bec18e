#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sonotrap {

using Vec3 = Eigen::Vector3d;

// MCUSD16P40B12RO housing is 16 mm across.
inline constexpr double kDefaultApertureRadiusMm = 8.0;
inline constexpr double kFlatPitchMm = 16.5;
inline constexpr double kCarrier40k = 40'000.0;
inline constexpr double kCarrier25k = 25'000.0;
// Two-channel ADC on the controller board.
inline constexpr int kMaxReceivers = 2;

enum class TransducerRole { Emitter, Receiver };

struct Transducer {
  int id = 0;
  Vec3 position = Vec3::Zero();  // mm
  Vec3 normal = Vec3::UnitZ();   // unit
  double radius = kDefaultApertureRadiusMm;
  double carrier_hz = kCarrier40k;
  TransducerRole role = TransducerRole::Emitter;

  bool is_emitter() const { return role == TransducerRole::Emitter; }
};

enum class ArrayKind { Flat, FlatWithReflector, SphericalCap, DoubleSided };

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  double width() const { return hi - lo; }
};

struct WorkingVolume {
  Interval x;
  Interval y;
  Interval z;

  bool contains(const Vec3& p) const { return x.contains(p.x()) && y.contains(p.y()) && z.contains(p.z()); }
  std::string describe() const;
};

/// Immutable transducer arrangement. Channel ids are contiguous from 0 and
/// index directly into transducers().
class ArrayLayout {
 public:
  ArrayLayout(ArrayKind kind, std::vector<Transducer> transducers,
              std::optional<double> reflector_z = std::nullopt,
              std::optional<double> cap_radius = std::nullopt,
              std::optional<double> side_length = std::nullopt);

  ArrayKind kind() const { return kind_; }
  const std::vector<Transducer>& transducers() const { return transducers_; }
  const Transducer& transducer(int id) const { return transducers_.at(static_cast<size_t>(id)); }
  size_t size() const { return transducers_.size(); }
  std::optional<double> reflector_z() const { return reflector_z_; }
  std::optional<double> cap_radius() const { return cap_radius_; }
  double side_length() const { return side_length_; }

  std::vector<int> emitter_ids() const;
  std::vector<int> receiver_ids() const;
  size_t emitter_count() const;

  // Throws InvalidArgument when emitters are driven at different carriers.
  double emitter_carrier() const;

  /// Command-validation volume. For reflector layouts it extends to the
  /// mirror image of the array plane so that mirrored focal targets are legal.
  WorkingVolume working_volume() const;

  /// Region a particle can physically occupy (below the reflector, if any).
  bool contains_particle(const Vec3& p) const;

  /// Center of the emitting aperture (flat arrays) or of curvature (caps).
  Vec3 center() const;

 private:
  ArrayKind kind_;
  std::vector<Transducer> transducers_;
  std::optional<double> reflector_z_;
  std::optional<double> cap_radius_;
  double side_length_ = 0.0;
};

std::string to_string(ArrayKind kind);
ArrayKind array_kind_from_string(const std::string& s);

// Extreme transducer centers in x/y plus one aperture diameter.
double aperture_side_length(std::span<const Transducer> transducers);

ArrayLayout build_flat_array(int nx, int ny, double pitch_mm, double carrier_hz,
                             double aperture_radius_mm = kDefaultApertureRadiusMm);

/// Transducers on a sphere of radius cap_radius about (0, 0, cap_radius),
/// packed in rings around the axis above the center and aimed at it. The
/// double-sided variant mirrors half of them about the plane of the center.
ArrayLayout build_spherical_cap(double cap_radius_mm, int count, double carrier_hz, bool double_sided,
                                double aperture_radius_mm = kDefaultApertureRadiusMm);

ArrayLayout add_reflector(const ArrayLayout& layout, double z_mm);

ArrayLayout mark_receivers(const ArrayLayout& layout, std::span<const int> ids, double receiver_carrier_hz);

/// Appends dedicated receiver transducers (e.g. the 40 kHz pair added to the
/// 25 kHz cap).
ArrayLayout add_receivers(const ArrayLayout& layout, std::span<const Vec3> positions,
                          std::span<const Vec3> normals, double receiver_carrier_hz,
                          double aperture_radius_mm = kDefaultApertureRadiusMm);

namespace presets {

inline constexpr double kReflectorHeightMm = 110.0;
inline constexpr double kCapRadiusMm = 100.0;

ArrayLayout flat_8x8(double carrier_hz = kCarrier40k);
ArrayLayout flat_8x8_reflector(double reflector_z_mm = kReflectorHeightMm, double carrier_hz = kCarrier40k);
ArrayLayout spherical_cap_64(double carrier_hz = kCarrier25k);
ArrayLayout double_sided_cap_64(double carrier_hz = kCarrier25k);
// 64 levitation emitters at 25 kHz plus two 40 kHz receivers.
ArrayLayout dual_frequency_cap_66();

}  // namespace presets

}  // namespace sonotrap

#pragma once

#include <filesystem>
#include <optional>

namespace sonotrap {

// Sensor guard range of the temperature probe.
inline constexpr double kSensorMinC = -40.0;
inline constexpr double kSensorMaxC = 85.0;
inline constexpr double kAirDensity20C = 1.204;  // kg/m^3

struct MediumState {
  double temperature_c = 20.0;
  double speed_of_sound = 343.4;  // m/s
  double density_air = kAirDensity20C;

  bool operator==(const MediumState&) const = default;
};

/// c = 331.4 + 0.6 T, T in degrees C. Throws SensorRange outside [-40, 85].
double speed_of_sound(double temperature_c);

MediumState make_medium(double temperature_c, double density_air = kAirDensity20C);

/// c/f in millimetres.
double wavelength_mm(double carrier_hz, const MediumState& medium);

/// Largest particle radius (lambda/4) still below half a wavelength across.
double max_particle_radius_mm(double carrier_hz, const MediumState& medium);

struct TemperatureReading {
  double temperature_c = 0.0;
};

class TemperatureSource {
 public:
  virtual ~TemperatureSource() = default;
  virtual TemperatureReading read() = 0;
  virtual int resolution_bits() const = 0;
  virtual double accuracy_c() const = 0;
};

/// Scripted source. When bits is set, readings are quantized over the sensor
/// range the way the HYGRO's 14-bit converter would report them.
class FixedTemperatureSource : public TemperatureSource {
 public:
  explicit FixedTemperatureSource(double temperature_c, std::optional<int> bits = std::nullopt);

  void set(double temperature_c) { temperature_c_ = temperature_c; }
  TemperatureReading read() override;
  int resolution_bits() const override { return bits_.value_or(14); }
  double accuracy_c() const override { return 0.2; }

 private:
  double temperature_c_;
  std::optional<int> bits_;
};

/// Reads a single decimal number (degrees C) from a text file on each read().
class FileTemperatureSource : public TemperatureSource {
 public:
  explicit FileTemperatureSource(std::filesystem::path path) : path_(std::move(path)) {}

  TemperatureReading read() override;
  int resolution_bits() const override { return 14; }
  double accuracy_c() const override { return 0.2; }

 private:
  std::filesystem::path path_;
};

double quantize_temperature(double temperature_c, int bits);

/// Returns a refreshed state; on failure the exception propagates and the
/// caller's state is untouched.
MediumState read_and_update(TemperatureSource& source, const MediumState& state);

}  // namespace sonotrap

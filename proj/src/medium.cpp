#include "sonotrap/medium.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sonotrap/error.hpp"

namespace sonotrap {

double speed_of_sound(double temperature_c) {
  if (!(temperature_c >= kSensorMinC && temperature_c <= kSensorMaxC)) {
    std::ostringstream os;
    os << "temperature " << temperature_c << " C outside sensor range [" << kSensorMinC << ", " << kSensorMaxC << "]";
    throw Error(ErrorCode::SensorRange, os.str());
  }
  return 331.4 + 0.6 * temperature_c;
}

MediumState make_medium(double temperature_c, double density_air) {
  if (!(density_air > 0.0)) throw Error(ErrorCode::InvalidArgument, "air density must be positive");
  return MediumState{temperature_c, speed_of_sound(temperature_c), density_air};
}

double wavelength_mm(double carrier_hz, const MediumState& medium) {
  if (!(carrier_hz > 0.0)) throw Error(ErrorCode::InvalidArgument, "carrier must be positive");
  return medium.speed_of_sound / carrier_hz * 1000.0;
}

double max_particle_radius_mm(double carrier_hz, const MediumState& medium) {
  return wavelength_mm(carrier_hz, medium) / 4.0;
}

double quantize_temperature(double temperature_c, int bits) {
  const double step = (kSensorMaxC - kSensorMinC) / std::ldexp(1.0, bits);
  return kSensorMinC + std::round((temperature_c - kSensorMinC) / step) * step;
}

FixedTemperatureSource::FixedTemperatureSource(double temperature_c, std::optional<int> bits)
    : temperature_c_(temperature_c), bits_(bits) {
  if (bits_ && (*bits_ < 1 || *bits_ > 14)) throw Error(ErrorCode::InvalidArgument, "resolution must be 1..14 bits");
}

TemperatureReading FixedTemperatureSource::read() {
  return {bits_ ? quantize_temperature(temperature_c_, *bits_) : temperature_c_};
}

TemperatureReading FileTemperatureSource::read() {
  std::ifstream in(path_);
  if (!in) throw Error(ErrorCode::SensorIo, "cannot open temperature file " + path_.string());
  double value = 0.0;
  if (!(in >> value)) throw Error(ErrorCode::SensorIo, "temperature file " + path_.string() + " holds no number");
  return {value};
}

MediumState read_and_update(TemperatureSource& source, const MediumState& state) {
  const auto reading = source.read();
  return make_medium(reading.temperature_c, state.density_air);
}

}  // namespace sonotrap

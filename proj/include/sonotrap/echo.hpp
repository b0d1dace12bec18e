#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sonotrap/dynamics.hpp"

namespace sonotrap {

/// Successive-approximation converter on the controller board. Input is
/// bipolar about mid-scale; full_scale_v is the peak-to-peak span.
struct AdcModel {
  int bits = 12;
  int channels = 2;
  double sample_rate_hz = 1e6;
  double full_scale_v = 1.0;
  double noise_lsb = 2.0;  // Gaussian sigma in quantization steps
  uint64_t seed = 1;

  int levels() const { return 1 << bits; }
  int mid_code() const { return levels() / 2; }
  double lsb_v() const { return full_scale_v / levels(); }

  /// Throws AdcChannelLimit above 2 channels, InvalidArgument otherwise.
  void validate() const;
  /// Round to the nearest code, clipped to [0, levels - 1].
  int quantize(double volts) const;
  double to_volts(int code) const { return (code - mid_code()) * lsb_v(); }
};

inline constexpr double kReceiverQ = 10.0;
inline constexpr int kProbeCycles = 8;

struct EchoTrace {
  int channel = 0;
  Vec3 receiver_position = Vec3::Zero();
  std::vector<int> samples;
  double sample_rate_hz = 1e6;
  double probe_frequency_hz = kCarrier40k;
  double receiver_carrier_hz = kCarrier40k;
  double receiver_q = kReceiverQ;
  int probe_cycles = kProbeCycles;
  AdcModel adc;
};

struct EchoOptions {
  int probe_cycles = kProbeCycles;
  double receiver_q = kReceiverQ;
  // Volt-millimetres at the receiver input per unit scatter / (d1 d2),
  // averaged over emitters. Puts a 1 mm bead 100 mm above the flat array
  // near 30 mV, about a hundred quantization steps.
  double gain_v_mm = 1.0e7;
  // Continuous levitation carrier leaking into each receiver, volts at its
  // input before the resonance. Zero when the array is only probing.
  double levitation_leak_v = 0.0;
  bool include_echo = true;
};

/// Rayleigh-like scatter strength a^3 / (lambda^2 + 4 a^2), mm. Grows as
/// a^3 / lambda^2 for small beads and rolls off to linear near a = lambda / 2.
double scatter_strength(double radius_mm, double wavelength_mm);

/// Echo traces for the layout's receivers (or `channels`, if given). Every
/// emitter fires a Hann-windowed tone burst at the probe frequency at t = 0.
/// Throws NoReceiver without receivers, AdcChannelLimit for more than the
/// ADC's channels, OutOfVolume for a particle outside the particle region.
std::vector<EchoTrace> simulate_echo(const ArrayLayout& layout, const ParticleState& particle, double probe_hz,
                                     const MediumState& medium, const AdcModel& adc, double duration_s,
                                     const EchoOptions& options = {}, std::span<const int> channels = {});

/// Receiver output in volts before sampling, at `oversample` times the ADC
/// rate; the noiseless analog path behind simulate_echo.
std::vector<double> received_waveform(const ArrayLayout& layout, const ParticleState& particle, int channel,
                                      double probe_hz, const MediumState& medium, double sample_rate_hz,
                                      double duration_s, int oversample, const EchoOptions& options = {});

/// Probe burst as seen through a receiver, at the trace's sample rate.
/// Quadrature pair: in-phase uses sin, quadrature cos under the same window.
struct ProbeTemplate {
  std::vector<double> in_phase;
  std::vector<double> quadrature;
  double energy = 0.0;  // sum of in_phase^2
};
ProbeTemplate probe_template(double probe_hz, int cycles, double receiver_carrier_hz, double receiver_q,
                             double sample_rate_hz);

struct MatchedPeak {
  double delay_s = 0.0;
  double amplitude_v = 0.0;  // burst amplitude at the receiver input
  size_t index = 0;
};

/// I/Q correlation against the probe template; the peak of the envelope is
/// refined by a parabola through its neighbours.
MatchedPeak matched_filter(const EchoTrace& trace);

enum class Direction { West, East, North, South };
std::string to_string(Direction d);

struct DetectionResult {
  bool detected = false;
  std::optional<Direction> direction;
  double amplitude_v = 0.0;
  // Sign of the particle offset along x and y; empty for an axis no
  // receiver pair measures.
  std::array<std::optional<int>, 2> offset_sign;
  std::vector<MatchedPeak> peaks;  // per trace
  bool saturated = false;
  std::vector<std::string> warnings;
};

inline constexpr double kDefaultNoiseFloorLsb = 8.0;
inline constexpr double kSaturationFraction = 0.01;

/// Presence from the strongest matched-filter amplitude against
/// noise_floor quantization steps; direction along the axis joining the two
/// receivers, toward the one that hears the echo first by cross-correlation
/// of the two traces (amplitude breaks ties).
DetectionResult detect(std::span<const EchoTrace> traces, double noise_floor_lsb = kDefaultNoiseFloorLsb);

/// The two receiver pairs of the flat 8x8 array: the middle row's end
/// elements (west, east) and the middle column's (south, north).
enum class ReceiverArrangement { WestEast, NorthSouth };
std::array<int, 2> arrangement_channels(ReceiverArrangement arrangement);
ArrayLayout flat_with_receivers(ReceiverArrangement arrangement, double carrier_hz = kCarrier40k);

struct SizeAmplitude {
  double size_mm = 0.0;       // bead diameter
  double amplitude_v = 0.0;   // peak receiver output, noiseless
  bool out_of_trap_range = false;
};

/// Echo amplitude against bead diameter for the dual-frequency cap (25 kHz
/// levitation, 40 kHz receivers) with the bead at the trap centre. Sizes
/// above half the levitation wavelength are flagged but still computed.
std::vector<SizeAmplitude> amplitude_vs_size(double probe_hz, std::span<const double> sizes_mm,
                                             const MediumState& medium, const EchoOptions& options = {});

/// Largest bead diameter a trap at the carrier holds: half a wavelength.
double max_trap_size_mm(double carrier_hz, const MediumState& medium);

}  // namespace sonotrap

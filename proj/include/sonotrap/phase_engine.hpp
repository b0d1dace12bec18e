#pragma once

#include <span>
#include <vector>

#include "sonotrap/geometry.hpp"
#include "sonotrap/medium.hpp"

namespace sonotrap {

inline constexpr double kFpgaClockHz = 100e6;

enum class FocusSignature { SingleFocus };

struct FocalCommand {
  Vec3 target = Vec3(0.0, 0.0, 100.0);  // mm
  FocusSignature signature = FocusSignature::SingleFocus;

  bool operator==(const FocalCommand&) const = default;
};

struct QuantizationConfig {
  double clock_hz = kFpgaClockHz;
  double carrier_hz = kCarrier40k;

  /// clock/carrier; throws InvalidArgument unless an integer >= 2.
  int cycles_per_period() const;

  static QuantizationConfig for_layout(const ArrayLayout& layout, double clock_hz = kFpgaClockHz);
};

/// One complete emission pattern: a continuous phase and a quantized delay
/// register value for every emitter, in channel order.
struct PhaseFrame {
  std::vector<int> channel_ids;
  std::vector<double> phases;        // radians, [0, 2pi)
  std::vector<int> delays_cycles;    // [0, cycles_per_period)
  int cycles_per_period = 2500;
  FocalCommand command;
  MediumState medium;

  size_t size() const { return phases.size(); }
  double quantized_phase(size_t i) const;
};

struct ControllerTiming {
  double latency_s = 60e-6;
  double refresh_hz = 1.0 / 60e-6;

  static ControllerTiming from_latency(double latency_s);
  static ControllerTiming from_refresh(double refresh_hz);
  // Frame latency of the ARM-only and the accelerated pipelines.
  static ControllerTiming software() { return from_latency(154e-6); }
  static ControllerTiming hardware() { return from_latency(60e-6); }
};

struct MultiplexSchedule {
  std::vector<PhaseFrame> frames;
  double dwell_s = 0.0;
  double cycle_rate_hz = 0.0;

  /// Frame active at time t (cycling in command order).
  const PhaseFrame& frame_at(double t_s) const;
  size_t index_at(double t_s) const;
};

double path_length(const Vec3& transducer_pos, const Vec3& target);

/// 2pi * (path mod lambda) / lambda.
double phase_shift(double path_mm, double wavelength_mm);

/// Round-to-nearest (ties to even) onto the register grid, wrapped into
/// [0, cycles_per_period).
int quantize_phase(double phase_rad, int cycles_per_period);

/// Shortest distance between two angles on the circle.
double circular_distance(double a, double b);

PhaseFrame compute_frame(const ArrayLayout& layout, const FocalCommand& command, const MediumState& medium,
                         const QuantizationConfig& quant);

/// Predicted focal width 2 lambda R / D.
double focal_width(double wavelength_mm, double focal_length_mm, double side_length_mm);

MultiplexSchedule multiplex(const ArrayLayout& layout, std::span<const FocalCommand> commands,
                            const MediumState& medium, const QuantizationConfig& quant, const ControllerTiming& timing);

/// Element-wise identical to calling compute_frame for every command.
std::vector<PhaseFrame> batch_compute(const ArrayLayout& layout, std::span<const FocalCommand> commands,
                                      const MediumState& medium, const QuantizationConfig& quant);

struct BenchmarkReport {
  size_t batch_size = 0;
  size_t repetitions = 0;
  size_t channels = 0;
  double latency_per_frame_s = 0.0;   // median batch time / batch size
  double refresh_hz = 0.0;            // 1 / latency_per_frame
  double frames_per_second = 0.0;     // batch size / median batch time
  double single_frame_latency_s = 0.0;  // median of compute_frame alone
  double batch_speedup = 0.0;         // single_frame_latency / latency_per_frame
};

BenchmarkReport benchmark(const ArrayLayout& layout, size_t frames, size_t repetitions,
                          const MediumState& medium = make_medium(20.0));

}  // namespace sonotrap

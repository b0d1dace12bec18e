#pragma once

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <vector>

#include "sonotrap/phase_engine.hpp"

namespace sonotrap {

struct ChannelRegister {
  int channel = 0;
  int delay_cycles = 0;
  bool enabled = true;

  bool operator==(const ChannelRegister&) const = default;
};

/// Register file of the phased-array controller. load_frame() stages a new
/// payload; the generator latches it at the next carrier-period boundary, so
/// a generated period always comes from exactly one frame.
class RegisterFile {
 public:
  RegisterFile(std::vector<int> channel_ids, int cycles_per_period);
  static RegisterFile for_layout(const ArrayLayout& layout, const QuantizationConfig& quant);

  void load_frame(const PhaseFrame& frame);
  void set_enabled(int channel, bool enabled);

  /// Registers the generator will use for the next period (staged frame, if
  /// any, committed first). Called once per period by the generator.
  std::vector<ChannelRegister> latch();

  /// Current committed registers with any staged frame applied, without latching.
  std::vector<ChannelRegister> snapshot() const;

  size_t size() const { return active_.size(); }
  int cycles_per_period() const { return cycles_per_period_; }
  uint64_t frames_loaded() const;

 private:
  std::vector<ChannelRegister> merged_locked() const;

  mutable std::mutex mutex_;
  std::vector<ChannelRegister> active_;
  std::optional<std::vector<int>> staged_;
  int cycles_per_period_;
  uint64_t frames_loaded_ = 0;
};

struct DigitalWaveform {
  int channel = 0;
  std::vector<uint8_t> samples;  // one per clock tick, 0 or 1
  double sample_rate = kFpgaClockHz;
  int cycles_per_period = 2500;
};

/// Square wave level at absolute tick t for a channel delayed by `delay`.
inline uint8_t square_level(int64_t tick, int delay, int cycles_per_period) {
  int64_t r = (tick - delay) % cycles_per_period;
  if (r < 0) r += cycles_per_period;
  return r < cycles_per_period / 2 ? 1 : 0;
}

/// Clocks the register file for `duration_s`, latching once per carrier
/// period. Throws InvalidArgument when fewer than two periods fit.
std::vector<DigitalWaveform> generate(RegisterFile& registers, double duration_s, const QuantizationConfig& clock);

/// Phase of b relative to a in [0, 2pi), from rising-edge offsets.
/// Throws NoEdges when either waveform has no rising edge.
double measured_phase(const DigitalWaveform& a, const DigitalWaveform& b);

/// Rising-edge tick indices (transitions 0 -> 1).
std::vector<int64_t> rising_edges(const DigitalWaveform& w);

/// Mean rising-edge spacing converted to hertz.
double fundamental_frequency(const DigitalWaveform& w);

/// Fraction of high samples over whole periods.
double duty_cycle(const DigitalWaveform& w);

/// Value-change dump: initial level of every channel at tick 0, then one
/// `tick channel level` line per transition, ordered by tick then channel.
void write_value_changes(std::ostream& out, const std::vector<DigitalWaveform>& waveforms);

}  // namespace sonotrap

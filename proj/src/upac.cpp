#include "sonotrap/upac.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "sonotrap/error.hpp"

namespace sonotrap {

RegisterFile::RegisterFile(std::vector<int> channel_ids, int cycles_per_period)
    : cycles_per_period_(cycles_per_period) {
  if (cycles_per_period < 2) throw Error(ErrorCode::InvalidArgument, "cycles per period must be >= 2");
  active_.reserve(channel_ids.size());
  for (int id : channel_ids) active_.push_back({id, 0, true});
}

RegisterFile RegisterFile::for_layout(const ArrayLayout& layout, const QuantizationConfig& quant) {
  return RegisterFile(layout.emitter_ids(), quant.cycles_per_period());
}

void RegisterFile::load_frame(const PhaseFrame& frame) {
  if (frame.delays_cycles.size() != active_.size()) {
    std::ostringstream os;
    os << "frame carries " << frame.delays_cycles.size() << " channels, register file has " << active_.size();
    throw Error(ErrorCode::FrameShape, os.str());
  }
  if (frame.cycles_per_period != cycles_per_period_) {
    throw Error(ErrorCode::FrameShape, "frame quantized for a different clock/carrier ratio");
  }
  for (int d : frame.delays_cycles) {
    if (d < 0 || d >= cycles_per_period_) throw Error(ErrorCode::FrameShape, "delay register value out of range");
  }
  std::lock_guard lock(mutex_);
  staged_ = frame.delays_cycles;
  ++frames_loaded_;
}

void RegisterFile::set_enabled(int channel, bool enabled) {
  std::lock_guard lock(mutex_);
  for (auto& r : active_) {
    if (r.channel == channel) {
      r.enabled = enabled;
      return;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "no register for channel " + std::to_string(channel));
}

std::vector<ChannelRegister> RegisterFile::merged_locked() const {
  auto out = active_;
  if (staged_) {
    for (size_t i = 0; i < out.size(); ++i) out[i].delay_cycles = (*staged_)[i];
  }
  return out;
}

std::vector<ChannelRegister> RegisterFile::latch() {
  std::lock_guard lock(mutex_);
  active_ = merged_locked();
  staged_.reset();
  return active_;
}

std::vector<ChannelRegister> RegisterFile::snapshot() const {
  std::lock_guard lock(mutex_);
  return merged_locked();
}

uint64_t RegisterFile::frames_loaded() const {
  std::lock_guard lock(mutex_);
  return frames_loaded_;
}

std::vector<DigitalWaveform> generate(RegisterFile& registers, double duration_s, const QuantizationConfig& clock) {
  const int cpp = clock.cycles_per_period();
  if (cpp != registers.cycles_per_period()) {
    throw Error(ErrorCode::InvalidArgument, "clock configuration does not match the register file");
  }
  const auto ticks = static_cast<int64_t>(std::llround(duration_s * clock.clock_hz));
  if (ticks < 2 * static_cast<int64_t>(cpp)) {
    throw Error(ErrorCode::InvalidArgument, "duration must cover at least two carrier periods");
  }

  const size_t n = registers.size();
  std::vector<DigitalWaveform> out(n);
  for (auto& w : out) {
    w.samples.resize(static_cast<size_t>(ticks));
    w.sample_rate = clock.clock_hz;
    w.cycles_per_period = cpp;
  }
  for (int64_t start = 0; start < ticks; start += cpp) {
    const auto regs = registers.latch();
    const int64_t end = std::min<int64_t>(ticks, start + cpp);
    for (size_t c = 0; c < n; ++c) {
      auto& w = out[c];
      w.channel = regs[c].channel;
      uint8_t* s = w.samples.data();
      if (!regs[c].enabled) {
        std::fill(s + start, s + end, uint8_t{0});
        continue;
      }
      for (int64_t t = start; t < end; ++t) s[t] = square_level(t, regs[c].delay_cycles, cpp);
    }
  }
  return out;
}

std::vector<int64_t> rising_edges(const DigitalWaveform& w) {
  std::vector<int64_t> edges;
  for (size_t t = 1; t < w.samples.size(); ++t) {
    if (w.samples[t] && !w.samples[t - 1]) edges.push_back(static_cast<int64_t>(t));
  }
  return edges;
}

double measured_phase(const DigitalWaveform& a, const DigitalWaveform& b) {
  if (a.cycles_per_period != b.cycles_per_period || a.sample_rate != b.sample_rate) {
    throw Error(ErrorCode::InvalidArgument, "waveforms sampled with different clocks");
  }
  const auto ea = rising_edges(a);
  const auto eb = rising_edges(b);
  if (ea.empty() || eb.empty()) throw Error(ErrorCode::NoEdges, "waveform has no rising edge");
  // Use the last edges: they belong to steady state after any frame switch.
  const int64_t cpp = a.cycles_per_period;
  int64_t offset = (eb.back() - ea.back()) % cpp;
  if (offset < 0) offset += cpp;
  return 2.0 * std::numbers::pi * static_cast<double>(offset) / static_cast<double>(cpp);
}

double fundamental_frequency(const DigitalWaveform& w) {
  const auto e = rising_edges(w);
  if (e.size() < 2) throw Error(ErrorCode::NoEdges, "need two rising edges to measure frequency");
  const double period_ticks = static_cast<double>(e.back() - e.front()) / static_cast<double>(e.size() - 1);
  return w.sample_rate / period_ticks;
}

double duty_cycle(const DigitalWaveform& w) {
  const size_t whole = w.samples.size() / static_cast<size_t>(w.cycles_per_period) * w.cycles_per_period;
  if (whole == 0) throw Error(ErrorCode::InvalidArgument, "waveform shorter than one period");
  size_t high = 0;
  for (size_t t = 0; t < whole; ++t) high += w.samples[t];
  return static_cast<double>(high) / static_cast<double>(whole);
}

void write_value_changes(std::ostream& out, const std::vector<DigitalWaveform>& waveforms) {
  struct Change {
    int64_t tick;
    int channel;
    int level;
  };
  std::vector<Change> changes;
  for (const auto& w : waveforms) {
    if (w.samples.empty()) continue;
    changes.push_back({0, w.channel, w.samples[0]});
    for (size_t t = 1; t < w.samples.size(); ++t) {
      if (w.samples[t] != w.samples[t - 1]) changes.push_back({static_cast<int64_t>(t), w.channel, w.samples[t]});
    }
  }
  std::stable_sort(changes.begin(), changes.end(), [](const Change& x, const Change& y) {
    return x.tick != y.tick ? x.tick < y.tick : x.channel < y.channel;
  });
  for (const auto& c : changes) out << c.tick << ' ' << c.channel << ' ' << c.level << '\n';
}

}  // namespace sonotrap

#include "sonotrap/phase_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "sonotrap/error.hpp"

namespace sonotrap {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Emitter coordinates in structure-of-arrays form for the phase kernel.
struct EmitterTable {
  std::vector<int> ids;
  std::vector<double> x, y, z;

  explicit EmitterTable(const ArrayLayout& layout) {
    for (const auto& t : layout.transducers()) {
      if (!t.is_emitter()) continue;
      ids.push_back(t.id);
      x.push_back(t.position.x());
      y.push_back(t.position.y());
      z.push_back(t.position.z());
    }
  }
  size_t size() const { return ids.size(); }
};

void check_target(const ArrayLayout& layout, const FocalCommand& command, std::optional<size_t> index = {}) {
  const auto volume = layout.working_volume();
  if (!volume.contains(command.target)) {
    std::ostringstream os;
    if (index) os << "command " << *index << ": ";
    os << "target (" << command.target.x() << ", " << command.target.y() << ", " << command.target.z()
       << ") outside working volume " << volume.describe();
    throw Error(ErrorCode::OutOfVolume, os.str());
  }
}

void fill_frame(const EmitterTable& table, const Vec3& target, double lambda, int cpp, PhaseFrame& frame) {
  const size_t n = table.size();
  frame.phases.resize(n);
  frame.delays_cycles.resize(n);
  const double tx = target.x(), ty = target.y(), tz = target.z();
  for (size_t i = 0; i < n; ++i) {
    const double dx = tx - table.x[i];
    const double dy = ty - table.y[i];
    const double dz = tz - table.z[i];
    const double phi = phase_shift(std::sqrt(dx * dx + dy * dy + dz * dz), lambda);
    frame.phases[i] = phi;
    frame.delays_cycles[i] = quantize_phase(phi, cpp);
  }
}

PhaseFrame empty_frame(const EmitterTable& table, const FocalCommand& command, const MediumState& medium, int cpp) {
  PhaseFrame frame;
  frame.channel_ids = table.ids;
  frame.cycles_per_period = cpp;
  frame.command = command;
  frame.medium = medium;
  return frame;
}

double check_carrier(const ArrayLayout& layout, const QuantizationConfig& quant) {
  const double carrier = layout.emitter_carrier();
  if (carrier != quant.carrier_hz) {
    throw Error(ErrorCode::InvalidArgument, "quantization carrier does not match the emitter carrier");
  }
  return carrier;
}

}  // namespace

int QuantizationConfig::cycles_per_period() const {
  if (!(clock_hz > 0.0) || !(carrier_hz > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "clock and carrier must be positive");
  }
  const double ratio = clock_hz / carrier_hz;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * ratio || rounded < 2.0) {
    std::ostringstream os;
    os << "clock " << clock_hz << " Hz is not an integer multiple (>= 2) of carrier " << carrier_hz << " Hz";
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
  return static_cast<int>(rounded);
}

QuantizationConfig QuantizationConfig::for_layout(const ArrayLayout& layout, double clock_hz) {
  return QuantizationConfig{clock_hz, layout.emitter_carrier()};
}

double PhaseFrame::quantized_phase(size_t i) const {
  return kTwoPi * delays_cycles.at(i) / cycles_per_period;
}

ControllerTiming ControllerTiming::from_latency(double latency_s) {
  if (!(latency_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "latency must be positive");
  return {latency_s, 1.0 / latency_s};
}

ControllerTiming ControllerTiming::from_refresh(double refresh_hz) {
  if (!(refresh_hz > 0.0)) throw Error(ErrorCode::InvalidArgument, "refresh rate must be positive");
  return {1.0 / refresh_hz, refresh_hz};
}

size_t MultiplexSchedule::index_at(double t_s) const {
  if (frames.empty()) throw Error(ErrorCode::InvalidArgument, "empty schedule");
  const auto slot = static_cast<long long>(std::floor(std::max(0.0, t_s) / dwell_s));
  return static_cast<size_t>(slot % static_cast<long long>(frames.size()));
}

const PhaseFrame& MultiplexSchedule::frame_at(double t_s) const { return frames[index_at(t_s)]; }

double path_length(const Vec3& transducer_pos, const Vec3& target) { return (target - transducer_pos).norm(); }

double phase_shift(double path_mm, double wavelength_mm) {
  if (!(wavelength_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "wavelength must be positive");
  double rem = std::fmod(path_mm, wavelength_mm);
  if (rem < 0.0) rem += wavelength_mm;
  const double phi = kTwoPi * rem / wavelength_mm;
  return phi < kTwoPi ? phi : 0.0;
}

int quantize_phase(double phase_rad, int cycles_per_period) {
  const double cycles = std::nearbyint(phase_rad / kTwoPi * cycles_per_period);
  long long q = static_cast<long long>(cycles) % cycles_per_period;
  if (q < 0) q += cycles_per_period;
  return static_cast<int>(q);
}

double circular_distance(double a, double b) {
  double d = std::fmod(std::abs(a - b), kTwoPi);
  return std::min(d, kTwoPi - d);
}

PhaseFrame compute_frame(const ArrayLayout& layout, const FocalCommand& command, const MediumState& medium,
                         const QuantizationConfig& quant) {
  check_target(layout, command);
  const double carrier = check_carrier(layout, quant);
  const int cpp = quant.cycles_per_period();
  const EmitterTable table(layout);
  PhaseFrame frame = empty_frame(table, command, medium, cpp);
  fill_frame(table, command.target, wavelength_mm(carrier, medium), cpp, frame);
  return frame;
}

double focal_width(double wavelength_mm, double focal_length_mm, double side_length_mm) {
  if (!(wavelength_mm > 0.0) || !(focal_length_mm > 0.0) || !(side_length_mm > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "focal width needs positive wavelength, focal length and side length");
  }
  return 2.0 * wavelength_mm * focal_length_mm / side_length_mm;
}

MultiplexSchedule multiplex(const ArrayLayout& layout, std::span<const FocalCommand> commands,
                            const MediumState& medium, const QuantizationConfig& quant, const ControllerTiming& timing) {
  if (commands.empty()) throw Error(ErrorCode::InvalidArgument, "multiplexing needs at least one focal command");
  MultiplexSchedule schedule;
  schedule.frames = batch_compute(layout, commands, medium, quant);
  schedule.dwell_s = timing.latency_s;
  schedule.cycle_rate_hz = 1.0 / (schedule.dwell_s * static_cast<double>(commands.size()));
  return schedule;
}

std::vector<PhaseFrame> batch_compute(const ArrayLayout& layout, std::span<const FocalCommand> commands,
                                      const MediumState& medium, const QuantizationConfig& quant) {
  if (commands.empty()) throw Error(ErrorCode::InvalidArgument, "batch needs at least one focal command");
  for (size_t i = 0; i < commands.size(); ++i) check_target(layout, commands[i], i);
  const double carrier = check_carrier(layout, quant);
  const int cpp = quant.cycles_per_period();
  const double lambda = wavelength_mm(carrier, medium);
  const EmitterTable table(layout);

  std::vector<PhaseFrame> frames;
  frames.reserve(commands.size());
  for (const auto& c : commands) frames.push_back(empty_frame(table, c, medium, cpp));

  // Frames are independent; split them across hardware threads when it pays.
  const size_t workers =
      std::min<size_t>(std::max(1u, std::thread::hardware_concurrency()), std::max<size_t>(1, frames.size() / 64));
  auto run = [&](size_t begin, size_t end) {
    for (size_t f = begin; f < end; ++f) fill_frame(table, frames[f].command.target, lambda, cpp, frames[f]);
  };
  if (workers <= 1) {
    run(0, frames.size());
  } else {
    std::vector<std::jthread> pool;
    const size_t chunk = (frames.size() + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
      const size_t begin = w * chunk;
      const size_t end = std::min(frames.size(), begin + chunk);
      if (begin < end) pool.emplace_back(run, begin, end);
    }
  }
  return frames;
}

BenchmarkReport benchmark(const ArrayLayout& layout, size_t frames, size_t repetitions, const MediumState& medium) {
  if (frames < 1 || repetitions < 1) throw Error(ErrorCode::InvalidArgument, "frames and repetitions must be >= 1");
  const auto volume = layout.working_volume();
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> ux(volume.x.lo, volume.x.hi), uy(volume.y.lo, volume.y.hi),
      uz(volume.z.lo, volume.z.hi);
  std::vector<FocalCommand> commands(frames);
  for (auto& c : commands) c.target = Vec3(ux(rng), uy(rng), uz(rng));
  const auto quant = QuantizationConfig::for_layout(layout);

  using clock = std::chrono::steady_clock;
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  };

  std::vector<double> batch_times, single_times;
  size_t sink = 0;
  for (size_t r = 0; r < repetitions; ++r) {
    auto t0 = clock::now();
    const auto out = batch_compute(layout, commands, medium, quant);
    auto t1 = clock::now();
    sink += out.back().delays_cycles.front();
    batch_times.push_back(std::chrono::duration<double>(t1 - t0).count());

    t0 = clock::now();
    for (const auto& c : commands) sink += compute_frame(layout, c, medium, quant).delays_cycles.front();
    t1 = clock::now();
    single_times.push_back(std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(frames));
  }
  (void)sink;

  BenchmarkReport report;
  report.batch_size = frames;
  report.repetitions = repetitions;
  report.channels = layout.emitter_count();
  const double batch = std::max(median(batch_times), 1e-12);
  report.latency_per_frame_s = batch / static_cast<double>(frames);
  report.refresh_hz = 1.0 / report.latency_per_frame_s;
  report.frames_per_second = static_cast<double>(frames) / batch;
  report.single_frame_latency_s = median(single_times);
  report.batch_speedup = report.single_frame_latency_s / report.latency_per_frame_s;
  return report;
}

}  // namespace sonotrap

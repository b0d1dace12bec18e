#include "sonotrap/echo.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "sonotrap/error.hpp"
#include "sonotrap/field.hpp"

namespace sonotrap {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Internal simulation rate before the ADC picks every m-th sample.
constexpr double kAnalogRateHz = 8e6;

int oversample_for(double sample_rate_hz) {
  return std::max(1, static_cast<int>(std::ceil(kAnalogRateHz / sample_rate_hz - 1e-9)));
}

double hann_burst(double t, double f, int cycles, bool quadrature) {
  const double len = cycles / f;
  if (t < 0.0 || t >= len) return 0.0;
  const double w = 0.5 * (1.0 - std::cos(kTwoPi * t / len));
  return w * (quadrature ? std::cos(kTwoPi * f * t) : std::sin(kTwoPi * f * t));
}

// Second-order band-pass with unit gain at the centre frequency.
struct Resonator {
  double b0, b2, a1, a2;

  Resonator(double f0, double q, double fs) {
    const double w0 = kTwoPi * f0 / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    b0 = alpha / a0;
    b2 = -alpha / a0;
    a1 = -2.0 * std::cos(w0) / a0;
    a2 = (1.0 - alpha) / a0;
  }

  void apply(std::vector<double>& x) const {
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    for (double& v : x) {
      const double y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = v;
      y2 = y1;
      y1 = y;
      v = y;
    }
  }

  std::complex<double> response(double f, double fs) const {
    const std::complex<double> z1 = std::polar(1.0, -kTwoPi * f / fs);
    const std::complex<double> z2 = z1 * z1;
    return (b0 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
  }
};

double facing_gain(const Transducer& t, const Vec3& toward, double wavelength) {
  const Vec3 u = (toward - t.position).normalized();
  const double cos_t = t.normal.dot(u);
  if (cos_t <= 0.0) return 0.0;
  const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
  return piston_directivity(kTwoPi / wavelength * t.radius, sin_t);
}

std::vector<int> pick_channels(const ArrayLayout& layout, const AdcModel& adc, std::span<const int> channels) {
  std::vector<int> ids(channels.begin(), channels.end());
  if (ids.empty()) ids = layout.receiver_ids();
  if (ids.empty()) throw Error(ErrorCode::NoReceiver, "layout has no receiver transducers");
  if (static_cast<int>(ids.size()) > adc.channels) {
    throw Error(ErrorCode::AdcChannelLimit, std::to_string(ids.size()) + " channels requested, the ADC samples " +
                                                std::to_string(adc.channels));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= layout.size() || layout.transducer(id).is_emitter()) {
      throw Error(ErrorCode::InvalidArgument, "channel " + std::to_string(id) + " is not a receiver");
    }
  }
  return ids;
}

// Delay of b behind a from their cross-correlation, searched over the lags
// a path difference up to `baseline_mm` allows.
double channel_lag_s(const EchoTrace& a, const EchoTrace& b, double baseline_mm) {
  const size_t n = std::min(a.samples.size(), b.samples.size());
  std::vector<double> va(n), vb(n);
  for (size_t i = 0; i < n; ++i) {
    va[i] = a.adc.to_volts(a.samples[i]);
    vb[i] = b.adc.to_volts(b.samples[i]);
  }
  // 300 m/s is below any supported sound speed.
  const auto max_lag = static_cast<long>(std::ceil(baseline_mm / 300e3 * a.sample_rate_hz)) + 2;
  const auto sn = static_cast<long>(n);
  auto corr = [&](long lag) {
    double sum = 0.0;
    for (long k = std::max(0L, -lag); k < std::min(sn, sn - lag); ++k) {
      sum += va[static_cast<size_t>(k)] * vb[static_cast<size_t>(k + lag)];
    }
    return sum;
  };
  long best = 0;
  double best_v = corr(0);
  for (long lag = -max_lag; lag <= max_lag; ++lag) {
    const double v = corr(lag);
    if (v > best_v) {
      best_v = v;
      best = lag;
    }
  }
  double shift = 0.0;
  const double lo = corr(best - 1), hi = corr(best + 1);
  const double den = lo - 2.0 * best_v + hi;
  if (den < 0.0) shift = 0.5 * (lo - hi) / den;
  return (static_cast<double>(best) + shift) / a.sample_rate_hz;
}

}  // namespace

void AdcModel::validate() const {
  if (channels > kMaxReceivers) {
    throw Error(ErrorCode::AdcChannelLimit, "the converter has " + std::to_string(kMaxReceivers) + " channels");
  }
  if (channels < 1) throw Error(ErrorCode::InvalidArgument, "ADC needs at least one channel");
  if (bits < 1 || bits > 16) throw Error(ErrorCode::InvalidArgument, "ADC resolution must be 1..16 bits");
  if (!(sample_rate_hz > 0.0) || sample_rate_hz > 1e6) {
    throw Error(ErrorCode::InvalidArgument, "ADC sample rate must be in (0, 1 MSPS]");
  }
  if (!(full_scale_v > 0.0)) throw Error(ErrorCode::InvalidArgument, "full scale must be positive");
  if (!(noise_lsb >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise must be non-negative");
}

int AdcModel::quantize(double volts) const {
  const double code = std::round(mid_code() + volts / lsb_v());
  return static_cast<int>(std::clamp(code, 0.0, static_cast<double>(levels() - 1)));
}

double scatter_strength(double radius_mm, double wavelength_mm) {
  if (radius_mm <= 0.0) return 0.0;
  const double a = radius_mm;
  return a * a * a / (wavelength_mm * wavelength_mm + 4.0 * a * a);
}

std::vector<double> received_waveform(const ArrayLayout& layout, const ParticleState& particle, int channel,
                                      double probe_hz, const MediumState& medium, double sample_rate_hz,
                                      double duration_s, int oversample, const EchoOptions& options) {
  if (!(probe_hz > 0.0)) throw Error(ErrorCode::InvalidArgument, "probe frequency must be positive");
  if (!(duration_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "trace duration must be positive");
  if (options.probe_cycles < 1 || !(options.receiver_q > 0.0) || oversample < 1) {
    throw Error(ErrorCode::InvalidArgument, "invalid echo options");
  }
  const Transducer& rx = layout.transducer(channel);
  const double fs = sample_rate_hz * oversample;
  const auto n = static_cast<size_t>(std::llround(duration_s * sample_rate_hz)) * static_cast<size_t>(oversample);
  std::vector<double> x(n, 0.0);

  const double c_mm = medium.speed_of_sound * 1e3;
  const double lambda = wavelength_mm(probe_hz, medium);
  const Vec3& p = particle.position;

  if (options.include_echo) {
    const auto emitters = layout.emitter_ids();
    const double d2 = (p - rx.position).norm();
    const double rx_gain = facing_gain(rx, p, lambda);
    const double strength = options.gain_v_mm * scatter_strength(particle.radius_mm, lambda) /
                            static_cast<double>(std::max<size_t>(emitters.size(), 1));
    const double burst_len = options.probe_cycles / probe_hz;
    for (int id : emitters) {
      const Transducer& tx = layout.transducer(id);
      const double d1 = (p - tx.position).norm();
      const double amp = strength * facing_gain(tx, p, lambda) * rx_gain / (d1 * d2);
      if (amp == 0.0) continue;
      const double delay = (d1 + d2) / c_mm;
      const auto i0 = static_cast<size_t>(std::max(0.0, std::ceil(delay * fs)));
      const auto i1 = std::min(n, static_cast<size_t>(std::ceil((delay + burst_len) * fs)) + 1);
      for (size_t i = i0; i < i1; ++i) {
        x[i] += amp * hann_burst(static_cast<double>(i) / fs - delay, probe_hz, options.probe_cycles, false);
      }
    }
  }

  const Resonator res(rx.carrier_hz, options.receiver_q, fs);
  res.apply(x);

  if (options.levitation_leak_v != 0.0 && layout.emitter_count() > 0) {
    // Steady-state resonator response to the continuous levitation carrier.
    const double f_lev = layout.emitter_carrier();
    const auto h = res.response(f_lev, fs);
    const double amp = options.levitation_leak_v * std::abs(h);
    const double ph = std::arg(h);
    for (size_t i = 0; i < n; ++i) x[i] += amp * std::sin(kTwoPi * f_lev * static_cast<double>(i) / fs + ph);
  }
  return x;
}

std::vector<EchoTrace> simulate_echo(const ArrayLayout& layout, const ParticleState& particle, double probe_hz,
                                     const MediumState& medium, const AdcModel& adc, double duration_s,
                                     const EchoOptions& options, std::span<const int> channels) {
  adc.validate();
  const auto ids = pick_channels(layout, adc, channels);
  if (!layout.contains_particle(particle.position)) {
    throw Error(ErrorCode::OutOfVolume, "particle outside the particle region");
  }
  const int m = oversample_for(adc.sample_rate_hz);
  std::vector<EchoTrace> out;
  for (int id : ids) {
    const auto analog =
        received_waveform(layout, particle, id, probe_hz, medium, adc.sample_rate_hz, duration_s, m, options);
    std::mt19937_64 rng(adc.seed + static_cast<uint64_t>(id) * 0x9E3779B97F4A7C15ull);
    std::normal_distribution<double> noise(0.0, adc.noise_lsb * adc.lsb_v());
    EchoTrace t;
    t.channel = id;
    t.receiver_position = layout.transducer(id).position;
    t.sample_rate_hz = adc.sample_rate_hz;
    t.probe_frequency_hz = probe_hz;
    t.receiver_carrier_hz = layout.transducer(id).carrier_hz;
    t.receiver_q = options.receiver_q;
    t.probe_cycles = options.probe_cycles;
    t.adc = adc;
    t.samples.reserve(analog.size() / static_cast<size_t>(m));
    for (size_t i = 0; i < analog.size(); i += static_cast<size_t>(m)) {
      const double v = analog[i] + (adc.noise_lsb > 0.0 ? noise(rng) : 0.0);
      t.samples.push_back(adc.quantize(v));
    }
    out.push_back(std::move(t));
  }
  return out;
}

ProbeTemplate probe_template(double probe_hz, int cycles, double receiver_carrier_hz, double receiver_q,
                             double sample_rate_hz) {
  const int m = oversample_for(sample_rate_hz);
  const double fs = sample_rate_hz * m;
  // Burst plus five resonator time constants of ringing.
  const double len = cycles / probe_hz + 5.0 * receiver_q / (std::numbers::pi * receiver_carrier_hz);
  const auto n = static_cast<size_t>(std::ceil(len * sample_rate_hz)) * static_cast<size_t>(m);
  std::vector<double> i_wave(n), q_wave(n);
  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    i_wave[i] = hann_burst(t, probe_hz, cycles, false);
    q_wave[i] = hann_burst(t, probe_hz, cycles, true);
  }
  const Resonator res(receiver_carrier_hz, receiver_q, fs);
  res.apply(i_wave);
  res.apply(q_wave);
  ProbeTemplate out;
  for (size_t i = 0; i < n; i += static_cast<size_t>(m)) {
    out.in_phase.push_back(i_wave[i]);
    out.quadrature.push_back(q_wave[i]);
    out.energy += i_wave[i] * i_wave[i];
  }
  return out;
}

MatchedPeak matched_filter(const EchoTrace& trace) {
  const auto tpl = probe_template(trace.probe_frequency_hz, trace.probe_cycles, trace.receiver_carrier_hz,
                                  trace.receiver_q, trace.sample_rate_hz);
  const size_t n = trace.samples.size();
  std::vector<double> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = trace.adc.to_volts(trace.samples[i]);
  std::vector<double> env(n, 0.0);
  for (size_t lag = 0; lag < n; ++lag) {
    double ci = 0.0, cq = 0.0;
    const size_t len = std::min(tpl.in_phase.size(), n - lag);
    for (size_t k = 0; k < len; ++k) {
      ci += v[lag + k] * tpl.in_phase[k];
      cq += v[lag + k] * tpl.quadrature[k];
    }
    env[lag] = std::hypot(ci, cq) / tpl.energy;
  }
  MatchedPeak out;
  if (n == 0) return out;
  const size_t k = static_cast<size_t>(std::max_element(env.begin(), env.end()) - env.begin());
  double shift = 0.0;
  double peak = env[k];
  if (k > 0 && k + 1 < n) {
    const double a = env[k - 1], b = env[k], c = env[k + 1];
    const double den = a - 2.0 * b + c;
    if (den < 0.0) {
      shift = 0.5 * (a - c) / den;
      peak = b - 0.25 * (a - c) * shift;
    }
  }
  out.index = k;
  out.delay_s = (static_cast<double>(k) + shift) / trace.sample_rate_hz;
  out.amplitude_v = peak;
  return out;
}

std::string to_string(Direction d) {
  switch (d) {
    case Direction::West: return "west";
    case Direction::East: return "east";
    case Direction::North: return "north";
    case Direction::South: return "south";
  }
  return "?";
}

DetectionResult detect(std::span<const EchoTrace> traces, double noise_floor_lsb) {
  if (traces.empty()) throw Error(ErrorCode::InvalidArgument, "detection needs at least one trace");
  DetectionResult out;
  double lsb = traces.front().adc.lsb_v();
  for (const auto& t : traces) {
    out.peaks.push_back(matched_filter(t));
    out.amplitude_v = std::max(out.amplitude_v, out.peaks.back().amplitude_v);
    lsb = std::max(lsb, t.adc.lsb_v());
    const int top = t.adc.levels() - 1;
    const auto clipped = std::count_if(t.samples.begin(), t.samples.end(), [&](int s) { return s <= 0 || s >= top; });
    if (!t.samples.empty() &&
        static_cast<double>(clipped) >= kSaturationFraction * static_cast<double>(t.samples.size())) {
      out.saturated = true;
      out.warnings.push_back("channel " + std::to_string(t.channel) + ": " + std::to_string(clipped) + " of " +
                             std::to_string(t.samples.size()) + " samples clipped");
    }
  }
  out.detected = out.amplitude_v > noise_floor_lsb * lsb;
  if (!out.detected || traces.size() < 2) return out;

  const Vec3 baseline = traces[1].receiver_position - traces[0].receiver_position;
  const int axis = std::abs(baseline.x()) >= std::abs(baseline.y()) ? 0 : 1;
  const double along = baseline[axis];
  if (along == 0.0) return out;
  // Positive when the second receiver hears the echo first.
  const double lead = -channel_lag_s(traces[0], traces[1], baseline.norm());
  const double resolution = 0.5 / traces[0].sample_rate_hz;
  int toward_second = 0;
  if (std::abs(lead) > resolution) {
    toward_second = lead > 0.0 ? 1 : -1;
  } else {
    const double a0 = out.peaks[0].amplitude_v, a1 = out.peaks[1].amplitude_v;
    if (std::abs(a1 - a0) > 0.01 * std::max(a0, a1)) toward_second = a1 > a0 ? 1 : -1;
  }
  const int sign = along > 0.0 ? toward_second : -toward_second;
  out.offset_sign[static_cast<size_t>(axis)] = sign;
  if (sign != 0) {
    if (axis == 0) out.direction = sign > 0 ? Direction::East : Direction::West;
    else out.direction = sign > 0 ? Direction::North : Direction::South;
  }
  return out;
}

std::array<int, 2> arrangement_channels(ReceiverArrangement arrangement) {
  // Row 3 runs along x at y = -8.25 mm, column 3 along y at x = -8.25 mm.
  if (arrangement == ReceiverArrangement::WestEast) return {24, 31};
  return {3, 59};
}

ArrayLayout flat_with_receivers(ReceiverArrangement arrangement, double carrier_hz) {
  const auto ids = arrangement_channels(arrangement);
  return mark_receivers(presets::flat_8x8(carrier_hz), ids, carrier_hz);
}

std::vector<SizeAmplitude> amplitude_vs_size(double probe_hz, std::span<const double> sizes_mm,
                                             const MediumState& medium, const EchoOptions& options) {
  const auto layout = presets::dual_frequency_cap_66();
  const double limit = max_trap_size_mm(layout.emitter_carrier(), medium);
  const int channel = layout.receiver_ids().front();
  constexpr double kRate = 1e6;
  constexpr double kDuration = 2e-3;
  std::vector<SizeAmplitude> out;
  for (double size : sizes_mm) {
    if (!(size >= 0.0)) throw Error(ErrorCode::InvalidArgument, "bead size must be non-negative");
    ParticleState bead;
    bead.position = layout.center();
    bead.radius_mm = size / 2.0;
    EchoOptions opts = options;
    opts.levitation_leak_v = 0.0;
    const auto w = received_waveform(layout, bead, channel, probe_hz, medium, kRate, kDuration,
                                     oversample_for(kRate), opts);
    double peak = 0.0;
    for (double v : w) peak = std::max(peak, std::abs(v));
    out.push_back({size, peak, size > limit});
  }
  return out;
}

double max_trap_size_mm(double carrier_hz, const MediumState& medium) {
  return wavelength_mm(carrier_hz, medium) / 2.0;
}

}  // namespace sonotrap

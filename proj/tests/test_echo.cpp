#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "sonotrap/echo.hpp"
#include "sonotrap/error.hpp"

using namespace sonotrap;

namespace {

const MediumState kMedium = calibration_medium();

ParticleState bead_at(double x, double y, double z, double radius = 0.5) {
  ParticleState p;
  p.position = Vec3(x, y, z);
  p.radius_mm = radius;
  return p;
}

AdcModel adc_with_seed(uint64_t seed) {
  AdcModel adc;
  adc.seed = seed;
  return adc;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Parse;
}

}  // namespace

TEST(Adc, QuantizeIsMonotoneAndClipped) {
  const AdcModel adc;
  int prev = adc.quantize(-1.0);
  EXPECT_EQ(prev, 0);
  for (double v = -1.0; v <= 1.0; v += 1e-4) {
    const int c = adc.quantize(v);
    EXPECT_GE(c, prev);
    prev = c;
  }
  EXPECT_EQ(prev, adc.levels() - 1);
  EXPECT_EQ(adc.quantize(0.0), adc.mid_code());
  EXPECT_NEAR(adc.to_volts(adc.quantize(0.1234)), 0.1234, adc.lsb_v() / 2.0 + 1e-15);
}

TEST(Adc, ChannelLimit) {
  AdcModel adc;
  adc.channels = 3;
  EXPECT_EQ(code_of([&] { adc.validate(); }), ErrorCode::AdcChannelLimit);
  adc.channels = 2;
  adc.sample_rate_hz = 2e6;
  EXPECT_EQ(code_of([&] { adc.validate(); }), ErrorCode::InvalidArgument);
}

TEST(Echo, ThirdReceiverRejected) {
  const std::array<int, 3> ids{24, 31, 3};
  EXPECT_EQ(code_of([&] { mark_receivers(presets::flat_8x8(), ids, kCarrier40k); }), ErrorCode::AdcChannelLimit);
  // Asking the two-receiver layout for three channels.
  const auto layout = flat_with_receivers(ReceiverArrangement::WestEast);
  const std::array<int, 3> channels{24, 31, 24};
  EXPECT_EQ(code_of([&] {
              simulate_echo(layout, bead_at(0, 0, 100), kCarrier40k, kMedium, AdcModel{}, 1e-3, {}, channels);
            }),
            ErrorCode::AdcChannelLimit);
}

TEST(Echo, NoReceiverRejected) {
  EXPECT_EQ(code_of([&] {
              simulate_echo(presets::flat_8x8(), bead_at(0, 0, 100), kCarrier40k, kMedium, AdcModel{}, 1e-3);
            }),
            ErrorCode::NoReceiver);
}

TEST(Echo, OutOfVolumeRejected) {
  const auto layout = flat_with_receivers(ReceiverArrangement::WestEast);
  EXPECT_EQ(code_of([&] { simulate_echo(layout, bead_at(0, 0, -5), kCarrier40k, kMedium, AdcModel{}, 1e-3); }),
            ErrorCode::OutOfVolume);
}

TEST(Echo, SilenceIsNotDetected) {
  const auto layout = flat_with_receivers(ReceiverArrangement::WestEast);
  EchoOptions opts;
  opts.include_echo = false;
  const auto traces = simulate_echo(layout, bead_at(0, 0, 100), kCarrier40k, kMedium, AdcModel{}, 2e-3, opts);
  const auto r = detect(traces);
  EXPECT_FALSE(r.detected);
  EXPECT_FALSE(r.direction);
}

TEST(Echo, BeadIsDetected) {
  const auto layout = flat_with_receivers(ReceiverArrangement::WestEast);
  const auto traces = simulate_echo(layout, bead_at(0, 0, 100), kCarrier40k, kMedium, AdcModel{}, 2e-3);
  EXPECT_TRUE(detect(traces).detected);
}

TEST(Echo, SyntheticLagPointsAtEarlierChannel) {
  const auto layout = flat_with_receivers(ReceiverArrangement::WestEast);
  AdcModel adc;
  adc.noise_lsb = 0.0;
  auto traces = simulate_echo(layout, bead_at(0, 0, 100), kCarrier40k, kMedium, adc, 2e-3);
  ASSERT_EQ(traces.size(), 2u);
  // East copy of the west trace, five samples late.
  auto delayed = traces[0];
  std::fill(delayed.samples.begin(), delayed.samples.end(), adc.mid_code());
  std::copy(traces[0].samples.begin(), traces[0].samples.end() - 5, delayed.samples.begin() + 5);
  delayed.channel = traces[1].channel;
  delayed.receiver_position = traces[1].receiver_position;
  const std::vector<EchoTrace> pair{traces[0], delayed};
  auto r = detect(pair);
  ASSERT_TRUE(r.detected);
  ASSERT_TRUE(r.direction);
  EXPECT_EQ(*r.direction, Direction::West);

  // Swap which channel is late.
  auto west_late = delayed;
  west_late.channel = traces[0].channel;
  west_late.receiver_position = traces[0].receiver_position;
  auto east = traces[0];
  east.channel = traces[1].channel;
  east.receiver_position = traces[1].receiver_position;
  const std::vector<EchoTrace> swapped{west_late, east};
  r = detect(swapped);
  ASSERT_TRUE(r.direction);
  EXPECT_EQ(*r.direction, Direction::East);
}

TEST(Echo, TwentyPlacementsResolveSide) {
  const auto layout = flat_with_receivers(ReceiverArrangement::WestEast);
  int correct = 0;
  for (int i = 0; i < 20; ++i) {
    const double x = i % 2 == 0 ? 5.0 : -5.0;
    const double y = -9.0 + static_cast<double>(i);
    const double z = 90.0 + static_cast<double>(i % 5) * 4.0;
    const auto traces =
        simulate_echo(layout, bead_at(x, y, z), kCarrier40k, kMedium, adc_with_seed(100 + static_cast<uint64_t>(i)), 2e-3);
    const auto r = detect(traces);
    if (r.detected && r.direction && *r.direction == (x > 0 ? Direction::East : Direction::West)) ++correct;
  }
  EXPECT_EQ(correct, 20);
}

TEST(Echo, NorthSouthArrangement) {
  const auto layout = flat_with_receivers(ReceiverArrangement::NorthSouth);
  auto r = detect(simulate_echo(layout, bead_at(0, 5, 100), kCarrier40k, kMedium, AdcModel{}, 2e-3));
  ASSERT_TRUE(r.direction);
  EXPECT_EQ(*r.direction, Direction::North);
  r = detect(simulate_echo(layout, bead_at(0, -5, 100), kCarrier40k, kMedium, AdcModel{}, 2e-3));
  ASSERT_TRUE(r.direction);
  EXPECT_EQ(*r.direction, Direction::South);
}

TEST(Echo, MatchedFilterRecoversTimeOfFlight) {
  // One emitter between two receivers, so there is a single path.
  const std::array<int, 2> rx{0, 2};
  const auto layout = mark_receivers(build_flat_array(3, 1, kFlatPitchMm, kCarrier40k), rx, kCarrier40k);
  ASSERT_EQ(layout.emitter_count(), 1u);
  AdcModel adc;
  adc.noise_lsb = 0.5;
  EchoOptions opts;
  opts.gain_v_mm = 2e8;
  for (const Vec3& p : {Vec3(0, 0, 60), Vec3(4, 3, 100), Vec3(-6, 0, 140)}) {
    const auto traces = simulate_echo(layout, bead_at(p.x(), p.y(), p.z()), kCarrier40k, kMedium, adc, 2e-3, opts);
    const Vec3 tx = layout.transducer(1).position;
    for (const auto& t : traces) {
      const double d1 = (p - tx).norm();
      const double d2 = (p - t.receiver_position).norm();
      const double expect_s = (d1 + d2) / (kMedium.speed_of_sound * 1e3);
      const auto peak = matched_filter(t);
      EXPECT_NEAR(static_cast<double>(peak.index) / t.sample_rate_hz, expect_s, 2.0 / t.sample_rate_hz)
          << "channel " << t.channel << " at " << p.transpose();
    }
  }
}

TEST(Echo, SaturationWarns) {
  const auto layout = flat_with_receivers(ReceiverArrangement::WestEast);
  EchoOptions opts;
  opts.gain_v_mm = 1e11;
  const auto r = detect(simulate_echo(layout, bead_at(0, 0, 100), kCarrier40k, kMedium, AdcModel{}, 2e-3, opts));
  EXPECT_TRUE(r.saturated);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Echo, LevitationLeakCostsAtLeastSixDecibels) {
  // Narrowband 40 kHz receiver beside 25 kHz levitation emitters.
  const auto layout = presets::dual_frequency_cap_66();
  const int ch = layout.receiver_ids().front();
  const auto bead = bead_at(0, 0, layout.center().z(), 0.5);
  EchoOptions quiet;
  EchoOptions leaky;
  leaky.levitation_leak_v = 0.2;
  auto peak_ratio = [&](const EchoOptions& o) {
    const auto w = received_waveform(layout, bead, ch, kCarrier40k, kMedium, 1e6, 2e-3, 8, o);
    EchoOptions leak_only = o;
    leak_only.include_echo = false;
    const auto n = received_waveform(layout, bead, ch, kCarrier40k, kMedium, 1e6, 2e-3, 8, leak_only);
    double s = 0.0, b = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
      s = std::max(s, std::abs(w[i] - n[i]));
      b = std::max(b, std::abs(n[i]));
    }
    return std::pair{s, b};
  };
  const auto [signal, leak] = peak_ratio(leaky);
  const auto [signal0, leak0] = peak_ratio(quiet);
  EXPECT_EQ(leak0, 0.0);
  EXPECT_NEAR(signal, signal0, 1e-12);
  // A 25 kHz input must come out of the 40 kHz resonator at least 6 dB down.
  EXPECT_LE(20.0 * std::log10(leak / 0.2), -6.0);
}

TEST(Echo, ScatterStrength) {
  EXPECT_EQ(scatter_strength(0.0, 8.5), 0.0);
  EXPECT_LT(scatter_strength(1e-3, 8.5), 1e-9);
  // Small beads grow as a^3.
  EXPECT_NEAR(scatter_strength(0.2, 8.5) / scatter_strength(0.1, 8.5), 8.0, 0.05);
  for (double a = 0.1; a < 5.0; a += 0.1) EXPECT_GT(scatter_strength(a + 0.1, 8.5), scatter_strength(a, 8.5));
}

TEST(Echo, SizeCurves) {
  const std::vector<double> sizes{0.0, 0.5, 1.0, 2.0, 3.0, 6.0, 8.0};
  const auto c40 = amplitude_vs_size(kCarrier40k, sizes, kMedium);
  const auto c25 = amplitude_vs_size(kCarrier25k, sizes, kMedium);
  ASSERT_EQ(c40.size(), sizes.size());
  EXPECT_EQ(c40[0].amplitude_v, 0.0);
  EXPECT_EQ(c25[0].amplitude_v, 0.0);
  for (size_t i = 1; i < sizes.size(); ++i) {
    EXPECT_GT(c40[i].amplitude_v, c25[i].amplitude_v) << sizes[i];
    EXPECT_GT(c40[i].amplitude_v, c40[i - 1].amplitude_v);
  }
  // 25 kHz traps hold up to lambda / 2 of 25 kHz.
  const double limit = max_trap_size_mm(kCarrier25k, kMedium);
  EXPECT_GT(limit, max_trap_size_mm(kCarrier40k, kMedium));
  EXPECT_NEAR(limit, kMedium.speed_of_sound * 1e3 / kCarrier25k / 2.0, 1e-12);
  for (const auto& s : c25) EXPECT_EQ(s.out_of_trap_range, s.size_mm > limit);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "sonotrap/error.hpp"
#include "sonotrap/phase_engine.hpp"

using namespace sonotrap;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

MediumState lambda_8_5() {
  MediumState m;
  m.speed_of_sound = 340.0;
  return m;
}

// Independent per-channel oracle: fractional part of d / lambda.
double naive_phase(const Vec3& pos, const Vec3& target, double lambda) {
  const double dx = target.x() - pos.x(), dy = target.y() - pos.y(), dz = target.z() - pos.z();
  const double cycles = std::hypot(dx, dy, dz) / lambda;
  return kTwoPi * (cycles - std::floor(cycles));
}

Vec3 random_in(const WorkingVolume& v, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(v.x.lo, v.x.hi), uy(v.y.lo, v.y.hi), uz(v.z.lo, v.z.hi);
  return {ux(rng), uy(rng), uz(rng)};
}

}  // namespace

TEST(PathLength, Examples) {
  EXPECT_DOUBLE_EQ(path_length(Vec3(0, 0, 0), Vec3(0, 0, 100)), 100.0);
  // sqrt(2 * 57.75^2 + 100^2) by hand: 129.113.
  EXPECT_NEAR(path_length(Vec3(-57.75, -57.75, 0), Vec3(0, 0, 100)), 129.113, 5e-3);
  EXPECT_NEAR(path_length(Vec3(-57.75, -57.75, 0), Vec3(0, 0, 100)),
              std::sqrt(57.75 * 57.75 * 2 + 100.0 * 100.0), 1e-12);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 50);
  for (int i = 0; i < 20; ++i) {
    const Vec3 a(n(rng), n(rng), n(rng));
    EXPECT_EQ(path_length(a, a), 0.0);
  }
}

TEST(PhaseShift, Examples) {
  EXPECT_NEAR(phase_shift(17.0, 8.5), 0.0, 1e-12);
  EXPECT_NEAR(phase_shift(4.25, 8.5), std::numbers::pi, 1e-12);
  const double oracle = std::fmod(136.79, 8.5) / 8.5 * kTwoPi;
  EXPECT_NEAR(phase_shift(136.79, 8.5), oracle, 1e-12);
  // 0.79 / 8.5 * 2 pi = 0.58397
  EXPECT_NEAR(phase_shift(136.79, 8.5), 0.5840, 1e-4);
}

TEST(PhaseShift, PeriodicInPath) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 300.0);
  for (int i = 0; i < 1000; ++i) {
    const double d = u(rng);
    EXPECT_LT(circular_distance(phase_shift(d + 8.5, 8.5), phase_shift(d, 8.5)), 1e-11);
    const double p = phase_shift(d, 8.5);
    EXPECT_GE(p, 0.0);
    EXPECT_LT(p, kTwoPi);
  }
}

TEST(Quantize, RoundsAndWraps) {
  EXPECT_EQ(quantize_phase(0.0, 2500), 0);
  EXPECT_EQ(quantize_phase(0.5838, 2500), 232);
  EXPECT_EQ(quantize_phase(kTwoPi - 1e-9, 2500), 0);
  EXPECT_EQ(quantize_phase(std::numbers::pi / 2.0, 2500), 625);
}

TEST(Quantize, ErrorBoundedByHalfStep) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, kTwoPi);
  for (int i = 0; i < 10000; ++i) {
    const double p = u(rng);
    const int q = quantize_phase(p, 2500);
    EXPECT_LE(circular_distance(kTwoPi * q / 2500.0, p), std::numbers::pi / 2500.0 + 1e-12);
  }
}

TEST(Quantization, ClockRatio) {
  EXPECT_EQ((QuantizationConfig{100e6, 40e3}.cycles_per_period()), 2500);
  EXPECT_EQ((QuantizationConfig{100e6, 25e3}.cycles_per_period()), 4000);
  EXPECT_THROW((QuantizationConfig{100e6, 30e3}.cycles_per_period()), Error);
  EXPECT_THROW((QuantizationConfig{40e3, 40e3}.cycles_per_period()), Error);
}

TEST(ComputeFrame, MatchesNaiveOracleOnAllChannels) {
  const auto layout = presets::flat_8x8();
  const auto medium = lambda_8_5();
  const auto frame = compute_frame(layout, {Vec3(0, 0, 100)}, medium, QuantizationConfig::for_layout(layout));
  ASSERT_EQ(frame.size(), 64u);
  for (size_t i = 0; i < 64; ++i) {
    const Vec3 pos = layout.transducer(frame.channel_ids[i]).position;
    EXPECT_LT(circular_distance(frame.phases[i], naive_phase(pos, Vec3(0, 0, 100), 8.5)), 1e-9);
    EXPECT_GE(frame.delays_cycles[i], 0);
    EXPECT_LT(frame.delays_cycles[i], 2500);
  }
  // Corner channel.
  EXPECT_NEAR(frame.phases[0], phase_shift(std::sqrt(2 * 57.75 * 57.75 + 1e4), 8.5), 1e-12);
}

TEST(ComputeFrame, OnAxisTargetIsMirrorSymmetric) {
  const auto layout = presets::flat_8x8();
  const auto frame = compute_frame(layout, {Vec3(0, 0, 100)}, lambda_8_5(), QuantizationConfig::for_layout(layout));
  for (int iy = 0; iy < 8; ++iy) {
    for (int ix = 0; ix < 8; ++ix) {
      const size_t i = static_cast<size_t>(iy * 8 + ix);
      EXPECT_EQ(frame.phases[i], frame.phases[static_cast<size_t>(iy * 8 + 7 - ix)]);
      EXPECT_EQ(frame.phases[i], frame.phases[static_cast<size_t>((7 - iy) * 8 + ix)]);
    }
  }
}

TEST(ComputeFrame, SingleEmitter) {
  const auto layout = build_flat_array(1, 1, 10.0, kCarrier40k);
  const auto frame = compute_frame(layout, {Vec3(0, 0, 100)}, make_medium(20.0), QuantizationConfig::for_layout(layout));
  ASSERT_EQ(frame.size(), 1u);
  EXPECT_EQ(frame.cycles_per_period, 2500);
  EXPECT_GE(frame.delays_cycles[0], 0);
  EXPECT_LT(frame.delays_cycles[0], 2500);
}

TEST(ComputeFrame, OutOfVolumeRejected) {
  const auto layout = presets::flat_8x8();
  try {
    compute_frame(layout, {Vec3(0, 0, -10)}, make_medium(20.0), QuantizationConfig::for_layout(layout));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfVolume);
  }
}

TEST(ComputeFrame, ShiftInvariance) {
  const auto layout = presets::flat_8x8();
  const Vec3 shift(12.5, -7.25, 3.0);
  std::vector<Transducer> moved = layout.transducers();
  for (auto& t : moved) t.position += shift;
  const ArrayLayout shifted(ArrayKind::Flat, moved, std::nullopt, std::nullopt, layout.side_length());
  std::mt19937_64 rng(21);
  const auto quant = QuantizationConfig::for_layout(layout);
  for (int i = 0; i < 50; ++i) {
    std::uniform_real_distribution<double> u(-30.0, 30.0), z(60.0, 150.0);
    const Vec3 target(u(rng), u(rng), z(rng));
    const auto a = compute_frame(layout, {target}, lambda_8_5(), quant);
    const auto b = compute_frame(shifted, {target + shift}, lambda_8_5(), quant);
    for (size_t c = 0; c < a.size(); ++c) EXPECT_LT(circular_distance(a.phases[c], b.phases[c]), 1e-9);
  }
}

TEST(ComputeFrame, TemperatureChangesOffAxisPhase) {
  const auto layout = presets::flat_8x8();
  const auto quant = QuantizationConfig::for_layout(layout);
  const auto a = compute_frame(layout, {Vec3(10, 5, 100)}, make_medium(20.0), quant);
  const auto b = compute_frame(layout, {Vec3(10, 5, 100)}, make_medium(21.0), quant);
  EXPECT_GT(circular_distance(a.phases[0], b.phases[0]), 1e-3);
}

TEST(ComputeFrame, CarrierMismatchRejected) {
  const auto layout = presets::flat_8x8();
  EXPECT_THROW(compute_frame(layout, {Vec3(0, 0, 100)}, make_medium(20.0), QuantizationConfig{100e6, 25e3}), Error);
}

TEST(FocalWidth, Formula) {
  EXPECT_NEAR(focal_width(8.5, 100.0, 132.0), 12.878787878787879, 1e-12);
  EXPECT_NEAR(focal_width(8.5, 100.0, 132.0), 13.0, 0.2);
  EXPECT_NEAR(focal_width(13.6, 100.0, 132.0), 20.6, 0.01);
  const double w = focal_width(9.1, 87.0, 120.0);
  EXPECT_NEAR(2.0 * 9.1 * 87.0 / w, 120.0, 1e-9);
  EXPECT_THROW(focal_width(0.0, 100.0, 132.0), Error);
}

TEST(Timing, LatencyRefreshIdentity) {
  EXPECT_NEAR(ControllerTiming::software().refresh_hz, 6493.5, 0.1);
  EXPECT_NEAR(ControllerTiming::hardware().refresh_hz, 16666.7, 0.1);
  EXPECT_NEAR(ControllerTiming::software().refresh_hz / 1000.0, 6.49, 0.005);
  EXPECT_NEAR(ControllerTiming::hardware().refresh_hz / 1000.0, 16.6, 0.07);
  const auto t = ControllerTiming::from_refresh(15'077.0);
  EXPECT_NEAR(t.latency_s * t.refresh_hz, 1.0, 1e-15);
}

TEST(Multiplex, CycleRateDividesRefresh) {
  const auto layout = presets::flat_8x8();
  const auto quant = QuantizationConfig::for_layout(layout);
  const auto timing = ControllerTiming::from_refresh(16'600.0);
  const std::vector<FocalCommand> one{{Vec3(0, 0, 100)}};
  const std::vector<FocalCommand> two{{Vec3(-10, 0, 100)}, {Vec3(10, 0, 100)}};
  EXPECT_NEAR(multiplex(layout, one, make_medium(20), quant, timing).cycle_rate_hz, 16'600.0, 1e-6);
  const auto s = multiplex(layout, two, make_medium(20), quant, timing);
  EXPECT_NEAR(s.cycle_rate_hz, 8'300.0, 1e-6);
  // Frames cycle in command order.
  EXPECT_EQ(s.index_at(0.0), 0u);
  EXPECT_EQ(s.index_at(1.5 * s.dwell_s), 1u);
  EXPECT_EQ(s.index_at(2.5 * s.dwell_s), 0u);
  EXPECT_EQ(s.frame_at(1.5 * s.dwell_s).command, two[1]);
  EXPECT_THROW(multiplex(layout, std::vector<FocalCommand>{}, make_medium(20), quant, timing), Error);
}

TEST(Batch, BitEqualToSequential) {
  const auto layout = presets::flat_8x8();
  const auto quant = QuantizationConfig::for_layout(layout);
  std::mt19937_64 rng(160);
  std::vector<FocalCommand> commands(160);
  for (auto& c : commands) c.target = random_in(layout.working_volume(), rng);
  const auto batch = batch_compute(layout, commands, make_medium(20), quant);
  ASSERT_EQ(batch.size(), 160u);
  for (size_t i = 0; i < commands.size(); ++i) {
    const auto one = compute_frame(layout, commands[i], make_medium(20), quant);
    EXPECT_EQ(batch[i].phases, one.phases);
    EXPECT_EQ(batch[i].delays_cycles, one.delays_cycles);
  }
  const auto single = batch_compute(layout, std::span(commands.data(), 1), make_medium(20), quant);
  EXPECT_EQ(single[0].phases, compute_frame(layout, commands[0], make_medium(20), quant).phases);
}

TEST(Batch, OneBadTargetRejectsTheBatch) {
  const auto layout = presets::flat_8x8();
  std::vector<FocalCommand> commands{{Vec3(0, 0, 100)}, {Vec3(0, 0, -1)}};
  EXPECT_THROW(batch_compute(layout, commands, make_medium(20), QuantizationConfig::for_layout(layout)), Error);
}

TEST(Benchmark, ReportIsConsistent) {
  const auto r = benchmark(presets::flat_8x8(), 160, 3);
  EXPECT_EQ(r.batch_size, 160u);
  EXPECT_EQ(r.channels, 64u);
  EXPECT_GT(r.latency_per_frame_s, 0.0);
  EXPECT_NEAR(r.refresh_hz * r.latency_per_frame_s, 1.0, 1e-9);
  const auto one = benchmark(presets::flat_8x8(), 1, 3);
  EXPECT_NEAR(one.frames_per_second / one.refresh_hz, 1.0, 1e-9);
}
